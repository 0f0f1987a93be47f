import struct

import numpy as np
import pytest

from fairsampling.errors import (CheckpointDimensionError, CheckpointFormatError,
                                 CheckpointTruncatedError, CheckpointVersionError, ConfigError)
from fairsampling.model import (HEADER_SIZE, MFParams, ModelConfig, init, load_checkpoint,
                                read_header, save_checkpoint, score, score_matrix)


def _params(biases=True, seed=0):
    p = init(5, 7, ModelConfig(d=3, use_biases=biases, seed=seed))
    if biases:
        rng = np.random.default_rng(seed + 1)
        p.user_bias[:] = rng.normal(size=5)
        p.item_bias[:] = rng.normal(size=7)
        p.global_bias = 0.25
    return p


def test_init_shapes_and_zero_biases():
    p = init(4, 6, ModelConfig(d=8, init_scale=0.5, use_biases=True, seed=1))
    assert p.user_factors.shape == (4, 8) and p.item_factors.shape == (6, 8)
    assert not p.user_bias.any() and not p.item_bias.any() and p.global_bias == 0.0
    assert 0.2 < p.user_factors.std() < 1.0
    b = init(4, 6, ModelConfig(use_biases=True, bias_only=True))
    assert b.d == 0 and b.bias_only


@pytest.mark.parametrize("kw", [dict(d=0), dict(bias_only=True), dict(init_scale=-1.0)])
def test_model_config_validation(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_score_matches_explicit_sum():
    p = _params()
    want = p.user_factors[2] @ p.item_factors[5] + p.user_bias[2] + p.item_bias[5] + 0.25
    assert score(p, 2, 5) == pytest.approx(want, rel=1e-14)
    vec = score(p, np.array([2, 0]), np.array([5, 1]))
    assert vec.shape == (2,) and vec[0] == pytest.approx(want, rel=1e-14)
    assert np.allclose(score_matrix(p)[2, 5], want)
    assert np.allclose(score_matrix(p, np.array([4]))[0], [score(p, 4, i) for i in range(7)])


def test_score_range_check():
    with pytest.raises(IndexError):
        score(_params(), 5, 0)


@pytest.mark.parametrize("biases", [True, False])
def test_checkpoint_roundtrip_is_bitwise(tmp_path, biases):
    p = _params(biases)
    path = tmp_path / "m.ckpt"
    save_checkpoint(p, path)
    assert load_checkpoint(path, expect_shape=(5, 7)).equals(p)
    n_floats = (5 + 7) * 3 + ((5 + 7 + 1) if biases else 0)
    assert path.stat().st_size == 36 + 8 * n_floats


def test_bias_only_roundtrip(tmp_path):
    p = init(3, 4, ModelConfig(use_biases=True, bias_only=True))
    p.item_bias[:] = [1, 2, 3, 4]
    save_checkpoint(p, tmp_path / "b.ckpt")
    q = load_checkpoint(tmp_path / "b.ckpt")
    assert q.equals(p) and q.bias_only and q.d == 0
    assert read_header(tmp_path / "b.ckpt")["bias_only"]


def test_header_layout(tmp_path):
    save_checkpoint(_params(), tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    magic, version, nu, ni, d, flags = struct.unpack("<4sIQQQI", raw[:36])
    assert (magic, version, nu, ni, d, flags) == (b"FSMF", 1, 5, 7, 3, 1)
    assert HEADER_SIZE == 36
    # first payload value is user_factors[0, 0], little-endian float64
    assert struct.unpack("<d", raw[36:44])[0] == _params().user_factors[0, 0]
    assert not (tmp_path / "m.ckpt.tmp").exists()


def _corrupt(path, data):
    path.write_bytes(data)
    return path


def test_checkpoint_errors(tmp_path):
    good = tmp_path / "m.ckpt"
    save_checkpoint(_params(), good)
    raw = good.read_bytes()
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(_corrupt(tmp_path / "a", b"XXXX" + raw[4:]))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(_corrupt(tmp_path / "b", raw[:4] + struct.pack("<I", 2) + raw[8:]))
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(_corrupt(tmp_path / "c", raw[:20]))
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(_corrupt(tmp_path / "d", raw[:-8]))
    with pytest.raises(CheckpointDimensionError):
        load_checkpoint(_corrupt(tmp_path / "e", raw + b"\0" * 8))
    with pytest.raises(CheckpointDimensionError):
        load_checkpoint(good, expect_shape=(5, 8))


def test_checkpoint_errors_are_os_errors(tmp_path):
    # callers catching OSError for file problems also see format problems
    with pytest.raises(OSError):
        load_checkpoint(_corrupt(tmp_path / "x", b"FS"))


def test_equals_detects_single_bit():
    p = _params()
    q = p.copy()
    assert p.equals(q)
    q.item_factors[0, 0] = np.nextafter(q.item_factors[0, 0], np.inf)
    assert not p.equals(q)
    assert not MFParams(np.zeros((1, 1)), np.zeros((1, 1))).equals(
        MFParams(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), np.zeros(1)))


def test_score_by_hand():
    p = MFParams(np.array([[1.0, -1.0]]), np.array([[0.5, 0.5]]), np.array([0.1]), np.array([-0.1]), 0.0)
    assert score(p, 0, 0) == pytest.approx(0.0, abs=1e-15)


def test_checkpoint_size_declared_by_layout(tmp_path):
    p = init(100, 200, ModelConfig(d=8))
    save_checkpoint(p, tmp_path / "m.ckpt")
    h = read_header(tmp_path / "m.ckpt")
    assert h["payload_bytes"] == 8 * (100 + 200) * 8
    assert h["file_bytes"] == HEADER_SIZE + 8 * (100 + 200) * 8
