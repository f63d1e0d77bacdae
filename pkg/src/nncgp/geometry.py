"""Locations, deterministic ordering and nearest-neighbor graphs.

Locations are plain ``(n, d)`` float arrays. Each fidelity level gets an
augmented reference set: its own sites followed by every site observed at a
higher level but not at this one, so that higher-level sites are always
contained in the reference set of every lower level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

JITTER_SCALE = 1e-9


def as_coords(coords) -> np.ndarray:
    """Return ``coords`` as a finite float64 ``(n, d)`` array (``-0.0`` folded to ``0.0``)."""
    arr = np.array(coords, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"coordinates must be a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("coordinates must be finite")
    return arr + 0.0


def _keys(coords: np.ndarray) -> list[tuple]:
    return [tuple(row) for row in coords.tolist()]


def domain_diameter(coords: np.ndarray) -> float:
    span = coords.max(axis=0) - coords.min(axis=0)
    diam = float(np.sqrt(np.sum(span**2)))
    return diam if diam > 0 else 1.0


def jitter_duplicates(coords, diameter: float | None = None) -> np.ndarray:
    """Move repeated locations by ``1e-9 * diameter`` in a fixed pseudo-random direction.

    The first occurrence of a location is left untouched. Directions come from a
    fixed-seed generator, so the output depends only on the input.
    """
    coords = as_coords(coords).copy()
    if diameter is None:
        diameter = domain_diameter(coords)
    rng = np.random.Generator(np.random.PCG64(0))
    seen: set[tuple] = set()
    for i in range(coords.shape[0]):
        key = tuple(coords[i].tolist())
        while key in seen:
            step = rng.standard_normal(coords.shape[1])
            step *= JITTER_SCALE * diameter / np.linalg.norm(step)
            coords[i] = coords[i] + step
            key = tuple(coords[i].tolist())
        seen.add(key)
    return coords


@dataclass(frozen=True)
class FidelityDataset:
    """Observed values ``z_t`` at the sites ``S_t`` of fidelity level ``level`` (1-based)."""

    level: int
    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        coords = as_coords(self.coords)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.level < 1:
            raise ValueError("level must be >= 1")
        if coords.shape[0] < 1:
            raise ValueError("empty location set")
        if values.shape[0] != coords.shape[0]:
            raise ValueError(
                f"level {self.level}: {coords.shape[0]} locations but {values.shape[0]} values"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError(f"level {self.level}: values must be finite")
        keys = _keys(coords)
        if len(set(keys)) != len(keys):
            dup = next(i for i, k in enumerate(keys) if keys.index(k) != i)
            raise ValueError(
                f"level {self.level}: duplicate location {coords[dup].tolist()} "
                "(use jitter_duplicates to separate repeated sites)"
            )
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


def order_locations(coords) -> np.ndarray:
    """Deterministic ordering: by coordinate sum, then lexicographically, then input index."""
    coords = as_coords(coords)
    n = coords.shape[0]
    if n == 0:
        raise ValueError("empty location set")
    keys = [np.arange(n)]
    keys += [coords[:, j] for j in range(coords.shape[1] - 1, -1, -1)]
    keys.append(coords.sum(axis=1))
    return np.lexsort(keys)


@dataclass
class AugmentedReferenceSet:
    """Reference set of one level: own sites first, then the augmented sites.

    ``index_maps[t']`` gives, for every level ``t' >= level``, the row in
    ``coords`` of each site of ``S_t'``.
    """

    level: int
    coords: np.ndarray
    n_own: int
    index_maps: dict[int, np.ndarray] = field(default_factory=dict)
    _lookup: dict[tuple, int] = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def n_extra(self) -> int:
        return self.n - self.n_own

    @property
    def extra(self) -> np.ndarray:
        return self.coords[self.n_own:]

    def locate(self, coords) -> np.ndarray:
        """Row index of each location in ``coords``; raises if any is absent."""
        out = np.empty(len(coords), dtype=np.int64)
        for i, key in enumerate(_keys(as_coords(coords))):
            try:
                out[i] = self._lookup[key]
            except KeyError:
                raise ValueError(
                    f"location {list(key)} is not in the reference set of level {self.level}"
                ) from None
        return out


def augment_reference_sets(datasets: list[FidelityDataset]) -> list[AugmentedReferenceSet]:
    """Build ``S~_t = S_t ∪ S_t*`` with ``S_t* = (∪_{i>t} S_i) \\ S_t`` for every level."""
    if not datasets:
        raise ValueError("no datasets")
    levels = [ds.level for ds in datasets]
    if levels != list(range(1, len(datasets) + 1)):
        raise ValueError(f"datasets must be ordered by level 1..T, got levels {levels}")
    dims = {ds.dim for ds in datasets}
    if len(dims) != 1:
        raise ValueError(f"inconsistent coordinate dimensions across levels: {sorted(dims)}")

    refsets = []
    for t, ds in enumerate(datasets):
        lookup = {k: i for i, k in enumerate(_keys(ds.coords))}
        extra = []
        for higher in datasets[t + 1:]:
            for key, row in zip(_keys(higher.coords), higher.coords):
                if key not in lookup:
                    lookup[key] = ds.n + len(extra)
                    extra.append(row)
        coords = ds.coords if not extra else np.vstack([ds.coords, np.asarray(extra)])
        ref = AugmentedReferenceSet(level=ds.level, coords=coords, n_own=ds.n, _lookup=lookup)
        for higher in datasets[t:]:
            ref.index_maps[higher.level] = ref.locate(higher.coords)
        refsets.append(ref)
    return refsets


@dataclass(frozen=True)
class NeighborGraph:
    """Directed nearest-neighbor graph over an ordered point set.

    Positions refer to the ordered sequence ``coords[order]``. Row ``i`` of
    ``neighbors`` holds the positions of ``N(i)`` sorted by distance (nearest
    first) and padded with ``-1``.
    """

    order: np.ndarray
    neighbors: np.ndarray
    m: int

    @property
    def n(self) -> int:
        return self.order.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.sum(self.neighbors >= 0, axis=1)

    def neighbor_list(self, i: int) -> list[int]:
        row = self.neighbors[i]
        return row[row >= 0].tolist()

    @property
    def inverse_order(self) -> np.ndarray:
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.shape[0])
        return inv


def _select(cand_idx: np.ndarray, cand_d2: np.ndarray, m: int) -> np.ndarray:
    """Pick the ``m`` smallest ``(distance, index)`` pairs per row; invalid slots carry ``inf``."""
    n_rows, width = cand_idx.shape
    out = np.full((n_rows, m), -1, dtype=np.int64)
    if width == 0:
        return out
    key_idx = np.where(np.isfinite(cand_d2), cand_idx, np.iinfo(np.int64).max)
    perm = np.lexsort((key_idx, cand_d2), axis=1)
    take = min(m, width)
    idx = np.take_along_axis(cand_idx, perm[:, :take], axis=1)
    d2 = np.take_along_axis(cand_d2, perm[:, :take], axis=1)
    idx[~np.isfinite(d2)] = -1
    out[:, :take] = idx
    return out


def _ordered_knn_brute(pts: np.ndarray, m: int, block: int = 512) -> np.ndarray:
    n = pts.shape[0]
    out = np.full((n, m), -1, dtype=np.int64)
    for a in range(0, n, block):
        b = min(n, a + block)
        d2 = np.sum((pts[a:b, None, :] - pts[None, :b, :]) ** 2, axis=2)
        cols = np.arange(b)
        d2[cols[None, :] >= np.arange(a, b)[:, None]] = np.inf
        cand = np.broadcast_to(cols, d2.shape)
        out[a:b] = _select(cand, d2, m)
    return out


def _ordered_knn_kdtree(pts: np.ndarray, m: int, block: int = 512) -> np.ndarray:
    n = pts.shape[0]
    out = np.full((n, m), -1, dtype=np.int64)
    for a in range(0, n, block):
        b = min(n, a + block)
        local = pts[a:b]
        # predecessors inside the block
        d2_in = np.sum((local[:, None, :] - local[None, :, :]) ** 2, axis=2)
        d2_in[np.triu_indices(b - a)] = np.inf
        idx_in = np.broadcast_to(np.arange(a, b), d2_in.shape)
        if a > 0:
            k = min(m, a)
            _, idx_out = cKDTree(pts[:a]).query(local, k=k)
            idx_out = np.asarray(idx_out, dtype=np.int64).reshape(b - a, k)
            # recompute distances from coordinates so both candidate pools compare alike
            d2_out = np.sum((pts[idx_out] - local[:, None, :]) ** 2, axis=2)
            cand = np.concatenate([idx_out, idx_in], axis=1)
            d2 = np.concatenate([d2_out, d2_in], axis=1)
        else:
            cand, d2 = idx_in, d2_in
        out[a:b] = _select(np.ascontiguousarray(cand), d2, m)
    return out


def build_neighbor_graph(coords, m: int, order: np.ndarray | None = None,
                         method: str = "kdtree") -> NeighborGraph:
    """Nearest earlier neighbors (Euclidean) for every point under ``order``.

    ``order`` defaults to :func:`order_locations`. ``method`` is ``"kdtree"`` or
    ``"brute"``; both return identical graphs for points in general position.
    """
    if m < 1:
        raise ValueError(f"neighbor budget m must be >= 1, got {m}")
    coords = as_coords(coords)
    if order is None:
        order = order_locations(coords)
    order = np.asarray(order, dtype=np.int64)
    pts = coords[order]
    if method == "kdtree":
        nbrs = _ordered_knn_kdtree(pts, m)
    elif method == "brute":
        nbrs = _ordered_knn_brute(pts, m)
    else:
        raise ValueError(f"unknown neighbor search method {method!r}")
    nbrs.setflags(write=False)
    order.setflags(write=False)
    return NeighborGraph(order=order, neighbors=nbrs, m=m)


def nearest_reference(ref_coords, targets, m: int) -> np.ndarray:
    """``m`` nearest reference points (no ordering restriction) for each target, nearest first."""
    ref_coords = as_coords(ref_coords)
    targets = as_coords(targets)
    k = min(m, ref_coords.shape[0])
    _, idx = cKDTree(ref_coords).query(targets, k=k)
    idx = np.asarray(idx, dtype=np.int64).reshape(targets.shape[0], k)
    d2 = np.sum((ref_coords[idx] - targets[:, None, :]) ** 2, axis=2)
    return _select(idx, d2, k)
