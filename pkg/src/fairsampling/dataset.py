"""Rating-log ingestion, k-core filtering, the binary interaction matrix and
popularity-independent holdout splits."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "RawInteraction",
    "InteractionMatrix",
    "SplitBundle",
    "parse_interactions",
    "filter_and_core",
    "build_matrix",
    "unbiased_split",
    "popularity",
    "write_split",
    "read_split",
    "write_pairs",
    "read_pairs",
]


@dataclass(frozen=True)
class RawInteraction:
    user_key: str
    item_key: str
    rating: float
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise ValueError("user_key and item_key must be non-empty")


class InteractionMatrix:
    """Observed binary user-item matrix, stored as two CSR adjacency indices.

    Rows of ``user_items`` and ``item_users`` are sorted. Membership is
    answered by binary search over the sorted pair codes ``u * n_items + i``.
    """

    def __init__(
        self,
        users: Sequence[int] | np.ndarray,
        items: Sequence[int] | np.ndarray,
        n_users: int,
        n_items: int,
        user_keys: Sequence[str] | None = None,
        item_keys: Sequence[str] | None = None,
    ):
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if n_users < 0 or n_items < 0:
            raise ValueError("negative dimensions")
        if users.size and (users.min() < 0 or users.max() >= n_users):
            raise ValueError("user index out of range")
        if items.size and (items.min() < 0 or items.max() >= n_items):
            raise ValueError("item index out of range")

        self.n_users = int(n_users)
        self.n_items = int(n_items)
        # int64 codes cannot overflow for any catalog that fits in memory
        codes = np.unique(users * max(self.n_items, 1) + items)
        self._codes = codes
        self._code_set = None
        self._users = codes // max(self.n_items, 1)
        self._items = codes % max(self.n_items, 1)

        # codes are sorted by (user, item): this already is the user CSR
        self._user_indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(self._users, minlength=self.n_users), out=self._user_indptr[1:])
        self._user_indices = self._items

        order = np.lexsort((self._users, self._items))
        self._item_indptr = np.zeros(self.n_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(self._items, minlength=self.n_items), out=self._item_indptr[1:])
        self._item_indices = self._users[order]
        self._user_deg = np.diff(self._user_indptr)
        self._item_deg = np.diff(self._item_indptr)

        if user_keys is None:
            user_keys = [str(u) for u in range(self.n_users)]
        if item_keys is None:
            item_keys = [str(i) for i in range(self.n_items)]
        if len(user_keys) != self.n_users or len(item_keys) != self.n_items:
            raise ValueError("key lists must match the matrix dimensions")
        self.user_keys = list(user_keys)
        self.item_keys = list(item_keys)
        self.user_index = {k: n for n, k in enumerate(self.user_keys)}
        self.item_index = {k: n for n, k in enumerate(self.item_keys)}

        for arr in (self._codes, self._users, self._items, self._user_indptr,
                    self._item_indptr, self._item_indices, self._user_deg, self._item_deg):
            arr.setflags(write=False)

    @property
    def n_interactions(self) -> int:
        return int(self._codes.size)

    @property
    def users(self) -> np.ndarray:
        """User index of every pair, in (user, item) order."""
        return self._users

    @property
    def items(self) -> np.ndarray:
        return self._items

    def user_items(self, u: int) -> np.ndarray:
        return self._user_indices[self._user_indptr[u]:self._user_indptr[u + 1]]

    def item_users(self, i: int) -> np.ndarray:
        return self._item_indices[self._item_indptr[i]:self._item_indptr[i + 1]]

    def user_degree(self) -> np.ndarray:
        return self._user_deg

    def item_degree(self) -> np.ndarray:
        return self._item_deg

    def contains(self, u, i):
        """Vectorized membership test ``Y[u, i] == 1``."""
        u = np.asarray(u, dtype=np.int64)
        i = np.asarray(i, dtype=np.int64)
        if self._codes.size == 0:
            return np.zeros(np.broadcast(u, i).shape, dtype=bool) if u.ndim or i.ndim else False
        q = u * max(self.n_items, 1) + i
        pos = np.searchsorted(self._codes, q)
        pos = np.minimum(pos, self._codes.size - 1)
        hit = self._codes[pos] == q
        return hit if hit.ndim else bool(hit)

    def __contains__(self, pair) -> bool:
        # scalar queries go through a hash set, built on first use
        u, i = int(pair[0]), int(pair[1])
        if not (0 <= u < self.n_users and 0 <= i < self.n_items):
            return False
        if self._code_set is None:
            self._code_set = frozenset(self._codes.tolist())
        return u * self.n_items + i in self._code_set

    def random_neighbors(self, which: str, nodes: np.ndarray, rng: np.random.Generator):
        """Draw one adjacency entry uniformly per node.

        Returns ``(picked, ok)``; ``ok`` is False for nodes with empty rows.
        """
        if which == "user_items":
            indptr, indices = self._user_indptr, self._user_indices
        elif which == "item_users":
            indptr, indices = self._item_indptr, self._item_indices
        else:
            raise ValueError(which)
        start = indptr[nodes]
        deg = indptr[nodes + 1] - start
        ok = deg > 0
        offs = (rng.random(nodes.shape) * deg).astype(np.int64)
        if indices.size == 0:
            return np.full(nodes.shape, -1, dtype=np.int64), ok
        picked = indices[np.minimum(start + offs, indices.size - 1)]
        return np.where(ok, picked, -1), ok

    def pairs(self) -> np.ndarray:
        return np.stack([self._users, self._items], axis=1)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_users, self.n_items), dtype=np.int8)
        dense[self._users, self._items] = 1
        return dense

    def with_pairs(self, users, items) -> "InteractionMatrix":
        """A new matrix over the same index space holding only the given pairs."""
        return InteractionMatrix(users, items, self.n_users, self.n_items,
                                 self.user_keys, self.item_keys)

    def __eq__(self, other):
        if not isinstance(other, InteractionMatrix):
            return NotImplemented
        return (self.n_users == other.n_users and self.n_items == other.n_items
                and np.array_equal(self._codes, other._codes))

    def __repr__(self):
        return (f"InteractionMatrix(n_users={self.n_users}, n_items={self.n_items}, "
                f"n_interactions={self.n_interactions})")


@dataclass
class SplitBundle:
    train: InteractionMatrix
    validation: list[np.ndarray]
    test: list[np.ndarray]
    popularity: np.ndarray
    seed: int
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    extra: dict = field(default_factory=dict)


def parse_interactions(source: IO | bytes | str, format: str = "tsv",
                       header: bool = False) -> list[RawInteraction]:
    """Parse ``user, item, rating[, timestamp]`` records.

    ``source`` may be a binary or text stream, or the raw bytes/str content.
    Malformed lines raise :class:`DataError` carrying the 1-based line number.
    """
    if format not in ("tsv", "csv"):
        raise ConfigError(f"unknown format {format!r}")
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    delimiter = "\t" if format == "tsv" else ","
    out = []
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    for row in reader:
        lineno = reader.line_num
        if header and lineno == 1:
            continue
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise DataError(f"line {lineno}: expected at least 3 columns, got {len(row)}", line=lineno)
        user, item = row[0].strip(), row[1].strip()
        if not user or not item:
            raise DataError(f"line {lineno}: empty user or item key", line=lineno)
        try:
            rating = float(row[2])
        except ValueError:
            raise DataError(f"line {lineno}: bad rating {row[2]!r}", line=lineno) from None
        ts = None
        if len(row) > 3 and row[3].strip():
            try:
                ts = int(row[3])
            except ValueError:
                raise DataError(f"line {lineno}: bad timestamp {row[3]!r}", line=lineno) from None
        out.append(RawInteraction(user, item, rating, ts))
    return out


def filter_and_core(interactions: Sequence[RawInteraction], min_rating: float = 4.0,
                    k: int = 20) -> list[RawInteraction]:
    """Keep ratings ``>= min_rating``, then peel to the iterative k-core.

    Degrees count distinct (user, item) pairs, so a repeated record cannot
    keep a node alive on its own.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    kept = [r for r in interactions if r.rating >= min_rating]
    if not kept:
        return []

    ukeys = {}
    ikeys = {}
    u = np.fromiter((ukeys.setdefault(r.user_key, len(ukeys)) for r in kept), dtype=np.int64, count=len(kept))
    i = np.fromiter((ikeys.setdefault(r.item_key, len(ikeys)) for r in kept), dtype=np.int64, count=len(kept))
    codes = np.unique(u * len(ikeys) + i)
    pu, pi = codes // len(ikeys), codes % len(ikeys)

    alive = np.ones(codes.size, dtype=bool)
    while True:
        udeg = np.bincount(pu[alive], minlength=len(ukeys))
        ideg = np.bincount(pi[alive], minlength=len(ikeys))
        drop = alive & ((udeg[pu] < k) | (ideg[pi] < k))
        if not drop.any():
            break
        alive &= ~drop

    survivors = np.isin(u * len(ikeys) + i, codes[alive])
    return [r for r, s in zip(kept, survivors) if s]


def build_matrix(interactions: Iterable[RawInteraction]) -> InteractionMatrix:
    """Materialize Y; dense indices follow first appearance of each key."""
    ukeys: dict[str, int] = {}
    ikeys: dict[str, int] = {}
    users, items = [], []
    for r in interactions:
        users.append(ukeys.setdefault(r.user_key, len(ukeys)))
        items.append(ikeys.setdefault(r.item_key, len(ikeys)))
    return InteractionMatrix(users, items, len(ukeys), len(ikeys), list(ukeys), list(ikeys))


def popularity(matrix: InteractionMatrix) -> np.ndarray:
    return matrix.item_degree().copy()


def _holdout_sizes(n: int, ratios) -> tuple[int, int]:
    n_val = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    return n_val, min(n_test, n - n_val)


def unbiased_split(matrix: InteractionMatrix, ratios=(0.7, 0.1, 0.2), seed: int = 0,
                   drop_empty_train_users: bool = False) -> SplitBundle:
    """Split Y into train / validation / test with item-uniform holdouts.

    Each holdout pair is drawn by first choosing an item uniformly among
    items that still have undrawn interactions, then one of that item's
    undrawn interactions uniformly. The first draws fill validation, the
    rest fill test.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or ratios[0] <= 0 \
            or not np.isclose(sum(ratios), 1.0):
        raise ConfigError(f"invalid split ratios {ratios}")

    rng = np.random.default_rng(seed)
    n = matrix.n_interactions
    n_val, n_test = _holdout_sizes(n, ratios)
    n_hold = n_val + n_test

    # undrawn interactions of item i: a random permutation consumed from the front
    item_ptr = matrix._item_indptr
    deg = np.diff(item_ptr)
    perm_users = matrix._item_indices.copy()
    for i in np.flatnonzero(deg > 1):
        rng.shuffle(perm_users[item_ptr[i]:item_ptr[i + 1]])
    taken = np.zeros(matrix.n_items, dtype=np.int64)

    pool = np.flatnonzero(deg > 0)
    pool_size = pool.size
    picks_u = np.empty(n_hold, dtype=np.int64)
    picks_i = np.empty(n_hold, dtype=np.int64)
    uniforms = rng.random(n_hold)
    for t in range(n_hold):
        slot = int(uniforms[t] * pool_size)
        item = pool[slot]
        picks_u[t] = perm_users[item_ptr[item] + taken[item]]
        picks_i[t] = item
        taken[item] += 1
        if taken[item] == deg[item]:
            pool_size -= 1
            pool[slot] = pool[pool_size]

    held = np.zeros(n, dtype=bool)
    if n_hold:
        held_codes = picks_u * max(matrix.n_items, 1) + picks_i
        held = np.isin(matrix._codes, held_codes)
    train = matrix.with_pairs(matrix.users[~held], matrix.items[~held])

    def per_user(us, its):
        rows = [[] for _ in range(matrix.n_users)]
        for u, i in zip(us.tolist(), its.tolist()):
            rows[u].append(i)
        return [np.array(sorted(r), dtype=np.int64) for r in rows]

    validation = per_user(picks_u[:n_val], picks_i[:n_val])
    test = per_user(picks_u[n_val:], picks_i[n_val:])
    bundle = SplitBundle(train, validation, test, popularity(train), int(seed), ratios)
    if drop_empty_train_users:
        bundle = _drop_empty_users(bundle)
    return bundle


def _drop_empty_users(bundle: SplitBundle) -> SplitBundle:
    train = bundle.train
    keep = np.flatnonzero(train.user_degree() > 0)
    remap = -np.ones(train.n_users, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    new_train = InteractionMatrix(remap[train.users], train.items, keep.size, train.n_items,
                                  [train.user_keys[u] for u in keep], train.item_keys)
    return SplitBundle(new_train, [bundle.validation[u] for u in keep],
                       [bundle.test[u] for u in keep], bundle.popularity, bundle.seed,
                       bundle.ratios, {"dropped_users": int(train.n_users - keep.size)})


def write_pairs(path, users, items) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in zip(np.asarray(users).tolist(), np.asarray(items).tolist()):
            fh.write(f"{u}\t{i}\n")


def read_pairs(path) -> tuple[np.ndarray, np.ndarray]:
    try:
        arr = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if arr.size == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return arr[:, 0].copy(), arr[:, 1].copy()


def _rows_to_pairs(rows):
    us = np.concatenate([np.full(len(r), u, dtype=np.int64) for u, r in enumerate(rows)]) if rows else np.empty(0, np.int64)
    its = np.concatenate(rows) if rows else np.empty(0, np.int64)
    return us, its.astype(np.int64)


def _pairs_to_rows(users, items, n_users):
    rows = [[] for _ in range(n_users)]
    for u, i in zip(users.tolist(), items.tolist()):
        rows[u].append(i)
    return [np.array(sorted(r), dtype=np.int64) for r in rows]


def write_split(bundle: SplitBundle, directory, manifest_extra: dict | None = None) -> None:
    """Write train.tsv / val.tsv / test.tsv, key tables and split.json."""
    os.makedirs(directory, exist_ok=True)
    tr = bundle.train
    write_pairs(os.path.join(directory, "train.tsv"), tr.users, tr.items)
    write_pairs(os.path.join(directory, "val.tsv"), *_rows_to_pairs(bundle.validation))
    write_pairs(os.path.join(directory, "test.tsv"), *_rows_to_pairs(bundle.test))
    with open(os.path.join(directory, "user_keys.tsv"), "w", encoding="utf-8") as fh:
        fh.writelines(f"{n}\t{k}\n" for n, k in enumerate(tr.user_keys))
    with open(os.path.join(directory, "item_keys.tsv"), "w", encoding="utf-8") as fh:
        fh.writelines(f"{n}\t{k}\n" for n, k in enumerate(tr.item_keys))
    info = {
        "kind": "split",
        "n_users": tr.n_users,
        "n_items": tr.n_items,
        "n_train": tr.n_interactions,
        "n_validation": int(sum(len(r) for r in bundle.validation)),
        "n_test": int(sum(len(r) for r in bundle.test)),
        "ratios": list(bundle.ratios),
        "seed": bundle.seed,
    }
    info.update(bundle.extra)
    if manifest_extra:
        info.update(manifest_extra)
    with open(os.path.join(directory, "split.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_keys(path, n):
    if not os.path.exists(path):
        return None
    keys = [None] * n
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            idx, key = line.rstrip("\n").split("\t", 1)
            keys[int(idx)] = key
    return keys


def read_split(directory) -> SplitBundle:
    meta_path = os.path.join(directory, "split.json")
    if not os.path.exists(meta_path):
        raise DataError(f"{directory} is not a split directory (no split.json)")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    n_users, n_items = meta["n_users"], meta["n_items"]
    tu, ti = read_pairs(os.path.join(directory, "train.tsv"))
    train = InteractionMatrix(tu, ti, n_users, n_items,
                              _read_keys(os.path.join(directory, "user_keys.tsv"), n_users),
                              _read_keys(os.path.join(directory, "item_keys.tsv"), n_items))
    val = _pairs_to_rows(*read_pairs(os.path.join(directory, "val.tsv")), n_users)
    test = _pairs_to_rows(*read_pairs(os.path.join(directory, "test.tsv")), n_users)
    return SplitBundle(train, val, test, popularity(train), int(meta["seed"]),
                       tuple(meta["ratios"]))
