import io

import numpy as np
import pytest

from fairsampling.dataset import (InteractionMatrix, RawInteraction, build_matrix,
                                  filter_and_core, parse_interactions, popularity,
                                  read_split, unbiased_split, write_split)
from fairsampling.errors import ConfigError, DataError

from helpers import rating_log
from oracles import k_core


def test_matrix_basic_queries(tiny):
    assert tiny.n_interactions == 9
    assert tiny.user_items(3).tolist() == [2, 3, 4]
    assert tiny.item_users(1).tolist() == [0, 1]
    assert tiny.user_degree().tolist() == [2, 2, 2, 3]
    assert tiny.item_degree().tolist() == [2, 2, 2, 2, 1]
    assert (0, 1) in tiny and (0, 2) not in tiny
    assert tiny.contains([0, 3, 1], [0, 4, 4]).tolist() == [True, True, False]


def test_matrix_out_of_range_membership_is_false(tiny):
    # u * n_items + i would alias (1, 0) without the range guard
    assert (0, 5) not in tiny
    assert (-1, 0) not in tiny


def test_matrix_deduplicates_and_is_read_only():
    m = InteractionMatrix([0, 0, 1], [2, 2, 0], 2, 3)
    assert m.n_interactions == 2
    with pytest.raises(ValueError):
        m.users[0] = 1


def test_matrix_rejects_bad_indices():
    with pytest.raises(ValueError):
        InteractionMatrix([0, 2], [0, 0], 2, 1)
    with pytest.raises(ValueError):
        InteractionMatrix([0], [0, 1], 2, 2)


def test_random_neighbors_flags_empty_rows(tiny):
    m = tiny.with_pairs([0], [1])
    picked, ok = m.random_neighbors("item_users", np.array([1, 2]), np.random.default_rng(0))
    assert ok.tolist() == [True, False]
    assert picked[0] == 0 and picked[1] == -1


def test_parse_tsv_and_csv_with_header():
    text = "user\titem\trating\n a \tb\t4\n\nc\td\t3.5\t17\n"
    rows = parse_interactions(text, "tsv", header=True)
    assert rows == [RawInteraction("a", "b", 4.0), RawInteraction("c", "d", 3.5, 17)]
    rows = parse_interactions(io.BytesIO(b"x,y,5\n"), "csv")
    assert rows == [RawInteraction("x", "y", 5.0)]


@pytest.mark.parametrize("text, line", [
    ("a\tb\t5\nc\td\n", 2),
    ("a\tb\tfive\n", 1),
    ("a\tb\t5\n\n\tb\t5\n", 3),
    ("a\tb\t5\tlater\n", 1),
])
def test_parse_reports_line_numbers(text, line):
    with pytest.raises(DataError) as err:
        parse_interactions(text)
    assert err.value.line == line


def test_parse_unknown_format():
    with pytest.raises(ConfigError):
        parse_interactions("a,b,1", "xml")


def test_filter_and_core_matches_oracle():
    rows = parse_interactions(rating_log(n_users=80, n_items=60, per_user=25, seed=3))
    for k in (1, 3, 8, 15):
        got = filter_and_core(rows, 4.0, k)
        want = k_core({(r.user_key, r.item_key) for r in rows if r.rating >= 4.0}, k)
        assert {(r.user_key, r.item_key) for r in got} == want


def test_filter_and_core_keeps_order_and_duplicates_do_not_count():
    rows = [RawInteraction("u", "a", 5), RawInteraction("u", "a", 5), RawInteraction("v", "a", 5)]
    # item a has two distinct users, user u only one distinct item
    assert filter_and_core(rows, 4, 2) == []
    rows = [RawInteraction(u, i, 5) for u in "pq" for i in "xy"] + [RawInteraction("p", "z", 1)]
    got = filter_and_core(rows, 4, 2)
    assert got == rows[:4]


def test_filter_and_core_empty_after_threshold():
    assert filter_and_core([RawInteraction("a", "b", 1.0)], 4.0, 1) == []


def test_build_matrix_first_appearance_order():
    m = build_matrix([RawInteraction("z", "q", 5), RawInteraction("a", "q", 5), RawInteraction("z", "b", 4)])
    assert m.user_keys == ["z", "a"] and m.item_keys == ["q", "b"]
    assert m.pairs().tolist() == [[0, 0], [0, 1], [1, 0]]
    assert popularity(m).tolist() == [2, 1]


def _split_from_log(seed=0, **kw):
    rows = filter_and_core(parse_interactions(rating_log(**kw)), 4.0, 5)
    m = build_matrix(rows)
    return m, unbiased_split(m, seed=seed)


def test_split_partitions_the_matrix():
    m, b = _split_from_log()
    hold = {(u, i) for rows in (b.validation, b.test) for u, r in enumerate(rows) for i in r.tolist()}
    train = {tuple(p) for p in b.train.pairs().tolist()}
    assert not hold & train
    assert hold | train == {tuple(p) for p in m.pairs().tolist()}
    n = m.n_interactions
    assert sum(map(len, b.validation)) == round(n * 0.1)
    assert sum(map(len, b.test)) == round(n * 0.2)
    assert b.popularity.tolist() == b.train.item_degree().tolist()


def test_split_is_seed_deterministic():
    _, a = _split_from_log(seed=4)
    _, b = _split_from_log(seed=4)
    _, c = _split_from_log(seed=5)
    assert a.train == b.train
    assert all(np.array_equal(x, y) for x, y in zip(a.test, b.test))
    assert a.train != c.train


def test_split_draws_items_uniformly_before_interactions():
    # item 0 has 40 interactions, item 1 has 4. Holding out 4 pairs per
    # draw means neither item can run out, so each is picked equally often.
    users = list(range(40)) + list(range(4))
    items = [0] * 40 + [1] * 4
    m = InteractionMatrix(users, items, 40, 2)
    counts = np.zeros(2)
    for s in range(400):
        b = unbiased_split(m, (0.9, 0.0, 0.1), seed=s)
        for row in b.test:
            counts += np.bincount(row, minlength=2)
    share = counts / counts.sum()
    assert abs(share[0] - 0.5) < 0.03


def test_split_rejects_bad_ratios(tiny):
    with pytest.raises(ConfigError):
        unbiased_split(tiny, (0.5, 0.1, 0.1))
    with pytest.raises(ConfigError):
        unbiased_split(tiny, (0.0, 0.5, 0.5))


def test_drop_empty_train_users():
    m = InteractionMatrix([0, 1, 1, 1, 2], [0, 0, 1, 2, 2], 3, 3)
    for seed in range(50):
        b = unbiased_split(m, (0.4, 0.0, 0.6), seed=seed, drop_empty_train_users=True)
        assert (b.train.user_degree() > 0).all()
        assert b.train.n_users == len(b.test) == 3 - b.extra.get("dropped_users", 0)


def test_split_roundtrip(tmp_path):
    m, b = _split_from_log(seed=2)
    write_split(b, tmp_path)
    back = read_split(tmp_path)
    assert back.train == b.train
    assert back.train.user_keys == b.train.user_keys
    for x, y in zip(back.validation + back.test, b.validation + b.test):
        assert np.array_equal(x, y)
    assert back.seed == 2 and back.ratios == (0.7, 0.1, 0.2)


def test_read_split_requires_manifest(tmp_path):
    with pytest.raises(DataError):
        read_split(tmp_path)


def test_csv_records_with_timestamps():
    rows = parse_interactions("u1,i9,4.5,1700000000\nu2,i3,2.0,1700000001\n", "csv")
    assert rows == [RawInteraction("u1", "i9", 4.5, 1700000000),
                    RawInteraction("u2", "i3", 2.0, 1700000001)]


def test_k_core_cascade():
    full = [RawInteraction(f"u{u}", f"i{i}", 5) for u in range(3) for i in range(3)]
    assert filter_and_core(full, 4, 3) == full
    # one missing pair drops u0 and i0 below 3, which in turn drops everyone
    assert filter_and_core(full[1:], 4, 3) == []


def test_adjacency_is_a_transpose():
    m = build_matrix([RawInteraction("u1", "i1", 5), RawInteraction("u2", "i1", 5),
                      RawInteraction("u1", "i2", 5)])
    assert [m.user_items(u).tolist() for u in range(2)] == [[0, 1], [0]]
    assert [m.item_users(i).tolist() for i in range(2)] == [[0, 1], [0]]
    big = build_matrix(filter_and_core(parse_interactions(rating_log(seed=9)), 4.0, 3))
    assert popularity(big).sum() == big.n_interactions == big.user_degree().sum()
    for u in range(0, big.n_users, 7):
        assert all(u in big.item_users(i) for i in big.user_items(u).tolist())
