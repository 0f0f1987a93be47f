"""Matrix-factorization scorer and its binary checkpoint format.

Checkpoint layout (little-endian)::

    magic      4 bytes   b"FSMF"
    version    uint32    1
    n_users    uint64
    n_items    uint64
    d          uint64
    flags      uint32    bit 0: bias terms present, bit 1: bias-only
    payload    float64   user_factors (n_users*d, row-major),
                         item_factors (n_items*d, row-major),
                         then, with biases: user_bias (n_users),
                         item_bias (n_items), global_bias (1)
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (CheckpointDimensionError, CheckpointFormatError,
                     CheckpointTruncatedError, CheckpointVersionError, ConfigError)

__all__ = [
    "ModelConfig",
    "MFParams",
    "init",
    "score",
    "score_matrix",
    "save_checkpoint",
    "load_checkpoint",
    "read_header",
    "MAGIC",
    "FORMAT_VERSION",
    "HEADER_SIZE",
]

MAGIC = b"FSMF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQQI")
HEADER_SIZE = _HEADER.size

FLAG_BIASES = 1
FLAG_BIAS_ONLY = 2


@dataclass(frozen=True)
class ModelConfig:
    d: int = 16
    init_scale: float = 0.1
    use_biases: bool = False
    bias_only: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.bias_only and not self.use_biases:
            raise ConfigError("bias_only requires use_biases")
        if self.d < 0 or (self.d == 0 and not self.bias_only):
            raise ConfigError("d must be >= 1 unless bias_only")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative")


@dataclass
class MFParams:
    user_factors: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray | None = None
    item_bias: np.ndarray | None = None
    global_bias: float | None = None
    bias_only: bool = False

    def __post_init__(self):
        if (self.user_bias is None) != (self.item_bias is None):
            raise ValueError("user_bias and item_bias must be present or absent together")
        if self.user_bias is not None and self.global_bias is None:
            self.global_bias = 0.0

    @property
    def d(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def has_biases(self) -> bool:
        return self.user_bias is not None

    def copy(self) -> "MFParams":
        return MFParams(self.user_factors.copy(), self.item_factors.copy(),
                        None if self.user_bias is None else self.user_bias.copy(),
                        None if self.item_bias is None else self.item_bias.copy(),
                        self.global_bias, self.bias_only)

    def is_finite(self) -> bool:
        arrays = [self.user_factors, self.item_factors]
        if self.has_biases:
            arrays += [self.user_bias, self.item_bias, np.array([self.global_bias])]
        return all(np.isfinite(a).all() for a in arrays)

    def equals(self, other: "MFParams") -> bool:
        """Bitwise equality of every parameter."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(np.asarray(a).view(np.uint64), np.asarray(b).view(np.uint64))
        return (self.bias_only == other.bias_only
                and same(self.user_factors, other.user_factors)
                and same(self.item_factors, other.item_factors)
                and same(self.user_bias, other.user_bias)
                and same(self.item_bias, other.item_bias)
                and (self.global_bias is None) == (other.global_bias is None)
                and (self.global_bias is None
                     or same(np.float64(self.global_bias), np.float64(other.global_bias))))


def init(n_users: int, n_items: int, cfg: ModelConfig = ModelConfig()) -> MFParams:
    """Gaussian factors with std ``init_scale``; biases start at exactly zero."""
    if n_users < 1 or n_items < 1:
        raise ConfigError("n_users and n_items must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    d = 0 if cfg.bias_only else cfg.d
    uf = rng.normal(0.0, 1.0, size=(n_users, d)) * cfg.init_scale
    vf = rng.normal(0.0, 1.0, size=(n_items, d)) * cfg.init_scale
    if cfg.use_biases:
        return MFParams(uf, vf, np.zeros(n_users), np.zeros(n_items), 0.0, cfg.bias_only)
    return MFParams(uf, vf)


def score(params: MFParams, u, i):
    """Logit ``<p_u, q_i> + b_u + b_i + b_0``; vectorizes over index arrays."""
    u = np.asarray(u)
    i = np.asarray(i)
    if np.any((u < 0) | (u >= params.n_users)) or np.any((i < 0) | (i >= params.n_items)):
        raise IndexError("user or item index out of range")
    s = np.einsum("...k,...k->...", params.user_factors[u], params.item_factors[i])
    if params.has_biases:
        s = s + params.user_bias[u] + params.item_bias[i] + params.global_bias
    return float(s) if np.ndim(s) == 0 else s


def score_matrix(params: MFParams, users=None) -> np.ndarray:
    """Full score rows for ``users`` (all users by default)."""
    uf = params.user_factors if users is None else params.user_factors[users]
    s = uf @ params.item_factors.T
    if params.has_biases:
        ub = params.user_bias if users is None else params.user_bias[users]
        s = s + ub[:, None] + params.item_bias[None, :] + params.global_bias
    return s


def save_checkpoint(params: MFParams, path) -> None:
    flags = (FLAG_BIASES if params.has_biases else 0) | (FLAG_BIAS_ONLY if params.bias_only else 0)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, params.n_users, params.n_items, params.d, flags)
    le = np.dtype("<f8")
    parts = [params.user_factors, params.item_factors]
    if params.has_biases:
        parts += [params.user_bias, params.item_bias, np.array([params.global_bias])]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        for a in parts:
            fh.write(np.ascontiguousarray(a, dtype=le).tobytes(order="C"))
    os.replace(tmp, path)


def _payload_floats(n_users, n_items, d, flags) -> int:
    n = (n_users + n_items) * d
    if flags & FLAG_BIASES:
        n += n_users + n_items + 1
    return n


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise CheckpointTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    magic, version, n_users, n_items, d, flags = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    return {"version": version, "n_users": n_users, "n_items": n_items, "d": d,
            "biases": bool(flags & FLAG_BIASES), "bias_only": bool(flags & FLAG_BIAS_ONLY),
            "payload_bytes": 8 * _payload_floats(n_users, n_items, d, flags),
            "file_bytes": os.path.getsize(path)}


def load_checkpoint(path, expect_shape: tuple[int, int] | None = None) -> MFParams:
    """Load a checkpoint written by :func:`save_checkpoint`.

    ``expect_shape`` optionally pins ``(n_users, n_items)``.
    """
    hdr = read_header(path)
    n_users, n_items, d = hdr["n_users"], hdr["n_items"], hdr["d"]
    if hdr["bias_only"] and not hdr["biases"]:
        raise CheckpointFormatError(f"{path}: bias-only flag without bias terms")
    if expect_shape is not None and tuple(expect_shape) != (n_users, n_items):
        raise CheckpointDimensionError(
            f"{path}: model is {n_users}x{n_items}, expected {expect_shape[0]}x{expect_shape[1]}")
    want = hdr["payload_bytes"]
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        payload = fh.read()
    if len(payload) < want:
        raise CheckpointTruncatedError(f"{path}: payload has {len(payload)} bytes, expected {want}")
    if len(payload) > want:
        raise CheckpointDimensionError(
            f"{path}: {len(payload) - want} trailing bytes beyond declared dimensions")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    pos = 0

    def take(n):
        nonlocal pos
        out = flat[pos:pos + n].copy()
        pos += n
        return out

    uf = take(n_users * d).reshape(n_users, d)
    vf = take(n_items * d).reshape(n_items, d)
    if hdr["biases"]:
        ub, ib, gb = take(n_users), take(n_items), take(1)
        return MFParams(uf, vf, ub, ib, float(gb[0]), hdr["bias_only"])
    return MFParams(uf, vf)
