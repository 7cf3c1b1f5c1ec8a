"""Region lattice: adjacency, neighbour orders and spatial weights.

Weight matrices are stored source-major: ``entries[s, r]`` is the weight with
which the incidence of region ``s`` enters the between-region term of region
``r``.  Row normalisation therefore makes each source distribute a total
weight of one over its neighbourhood.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import SelfLoop, UnknownRegion, DataValidationError

#: neighbour order reported for pairs with no connecting path
UNREACHABLE = -1


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RegionSet:
    """Ordered region identifiers; every matrix in a study is indexed by it."""

    regions: tuple[tuple[str, str], ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        regions = tuple((str(i), str(n)) for i, n in self.regions)
        ids = [i for i, _ in regions]
        if any(not i for i in ids):
            raise DataValidationError("region ids must be non-empty")
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataValidationError(f"duplicate region ids: {dup}")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "index", {i: k for k, i in enumerate(ids)})

    @classmethod
    def from_ids(cls, ids: Iterable[str], names: Iterable[str] | None = None) -> "RegionSet":
        ids = list(ids)
        names = list(names) if names is not None else ids
        return cls(tuple(zip(ids, names)))

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.regions]

    @property
    def names(self) -> list[str]:
        return [n for _, n in self.regions]

    def __len__(self) -> int:
        return len(self.regions)

    def position(self, region_id: str) -> int:
        try:
            return self.index[region_id]
        except KeyError:
            raise UnknownRegion(f"unknown region id {region_id!r}") from None


@dataclass(frozen=True)
class AdjacencyMatrix:
    regions: RegionSet
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=bool)
        if e.shape != (len(self.regions),) * 2:
            raise DataValidationError(f"adjacency shape {e.shape} does not match {len(self.regions)} regions")
        if not np.array_equal(e, e.T) or e.diagonal().any():
            raise DataValidationError("adjacency must be symmetric with an empty diagonal")
        object.__setattr__(self, "entries", _frozen(e))


@dataclass(frozen=True)
class WeightMatrix:
    regions: RegionSet
    entries: np.ndarray
    max_order: int = 2
    normalized: bool = True

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (len(self.regions),) * 2:
            raise DataValidationError(f"weight shape {e.shape} does not match {len(self.regions)} regions")
        if (e < 0).any() or np.diagonal(e).any():
            raise DataValidationError("weights must be nonnegative with zero diagonal")
        object.__setattr__(self, "entries", _frozen(e))

    def scaled(self, c: float) -> "WeightMatrix":
        """Return a copy with every weight multiplied by ``c`` (flagged unnormalised)."""
        return WeightMatrix(self.regions, self.entries * c, self.max_order, False)


def build_adjacency(regions: RegionSet, borders: Iterable[Sequence[str]]) -> AdjacencyMatrix:
    """Symmetric adjacency from undirected border pairs; duplicates are harmless."""
    n = len(regions)
    adj = np.zeros((n, n), dtype=bool)
    for a, b in borders:
        if a == b:
            raise SelfLoop(f"border pair ({a}, {b}) is a self loop")
        i, j = regions.position(a), regions.position(b)
        adj[i, j] = adj[j, i] = True
    return AdjacencyMatrix(regions, adj)


def neighbor_order(adj: AdjacencyMatrix) -> np.ndarray:
    """Shortest-path lengths in the border graph, ``UNREACHABLE`` across components."""
    dist = shortest_path(csr_matrix(adj.entries.astype(np.int8)), method="D", unweighted=True)
    order = np.full(dist.shape, UNREACHABLE, dtype=np.int64)
    ok = np.isfinite(dist)
    order[ok] = dist[ok].astype(np.int64)
    return _frozen(order)


def build_weights(orders: np.ndarray, max_order: int = 2, normalize: bool = True,
                  regions: RegionSet | None = None) -> WeightMatrix:
    """Unit weight for every pair with ``1 <= order <= max_order``.

    With ``normalize`` each row with at least one neighbour is scaled to sum
    to one; rows of isolated regions stay zero.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    orders = np.asarray(orders)
    w = ((orders >= 1) & (orders <= max_order)).astype(float)
    if normalize:
        rs = w.sum(axis=1)
        nz = rs > 0
        w[nz] /= rs[nz, None]
    if regions is None:
        regions = RegionSet.from_ids(str(k) for k in range(orders.shape[0]))
    return WeightMatrix(regions, w, max_order, normalize)


def weights_from_borders(regions: RegionSet, borders, max_order: int = 2,
                         normalize: bool = True) -> WeightMatrix:
    return build_weights(neighbor_order(build_adjacency(regions, borders)),
                         max_order, normalize, regions)


def read_borders(source: str | PathLike | TextIO) -> list[tuple[str, str]]:
    """Read a ``from,to`` border CSV, dropping duplicate undirected pairs."""
    if isinstance(source, (str, PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_borders(fh)
    reader = csv.DictReader(source)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["from", "to"]:
        raise DataValidationError(f"border file header must be 'from,to', got {reader.fieldnames}")
    seen: set[frozenset] = set()
    out = []
    for lineno, row in enumerate(reader, start=2):
        a, b = row["from"].strip(), row["to"].strip()
        if not a or not b:
            raise DataValidationError(f"line {lineno}: empty region id")
        key = frozenset((a, b))
        if key in seen:
            continue
        seen.add(key)
        out.append((a, b))
    return out


def write_borders(borders: Iterable[Sequence[str]], dest: TextIO) -> None:
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(["from", "to"])
    for a, b in borders:
        w.writerow([a, b])


def order_stats(orders: np.ndarray) -> dict:
    """Summary used by ``graph-check``."""
    off = ~np.eye(orders.shape[0], dtype=bool)
    o = orders[off]
    reach = o[o != UNREACHABLE]
    counts = {int(k): int(v) for k, v in zip(*np.unique(reach, return_counts=True))}
    n_comp = _n_components(orders)
    deg = (orders == 1).sum(axis=1)
    return {
        "n_regions": int(orders.shape[0]),
        "n_components": n_comp,
        "unreachable_pairs": int((o == UNREACHABLE).sum()) // 2,
        "order_counts": {k: v // 2 for k, v in counts.items()},
        "isolated": int((deg == 0).sum()),
        "min_degree": int(deg.min()) if deg.size else 0,
        "max_degree": int(deg.max()) if deg.size else 0,
        "mean_degree": float(deg.mean()) if deg.size else 0.0,
    }


def _n_components(orders: np.ndarray) -> int:
    seen = np.zeros(orders.shape[0], dtype=bool)
    n = 0
    for i in range(orders.shape[0]):
        if not seen[i]:
            n += 1
            seen |= orders[i] != UNREACHABLE
    return n

