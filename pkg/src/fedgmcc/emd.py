"""Earth Mover Distance between weighted signatures.

The transport problem is solved exactly with the transportation simplex
(network simplex on the complete bipartite supplier/consumer graph). Labeled
datasets are summarised as per-class histograms over a shared feature grid;
two cells of different classes are a full feature-space diameter apart, so
label disagreement dominates the ground cost.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .data import ClientDataset

TOL = 1e-12


@dataclass
class Signature:
    centroids: np.ndarray  # (m, d) feature coordinates
    weights: np.ndarray  # (m,) positive masses
    labels: np.ndarray | None = None  # (m,) class of each centroid
    class_cost: float = 0.0

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if len(self.centroids) != len(self.weights):
            raise ValueError("one weight per centroid required")
        if len(self.weights) == 0 or np.any(self.weights <= 0):
            raise ValueError("signature weights must be positive")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if len(self.labels) != len(self.weights):
                raise ValueError("one label per centroid required")

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass
class FlowResult:
    distance: float
    flows: np.ndarray
    costs: np.ndarray


def ground_costs(a: Signature, b: Signature) -> np.ndarray:
    if a.dim != b.dim:
        raise ValueError(f"centroid dimensions differ: {a.dim} vs {b.dim}")
    diff = a.centroids[:, None, :] - b.centroids[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    if a.labels is not None and b.labels is not None:
        gap = max(a.class_cost, b.class_cost)
        sq = sq + (gap * (a.labels[:, None] != b.labels[None, :])) ** 2
    return np.sqrt(sq)


def _northwest_corner(supply, demand):
    m, n = len(supply), len(demand)
    s = supply.copy()
    d = demand.copy()
    flows = np.zeros((m, n))
    basis = []
    i = j = 0
    while i < m and j < n:
        x = min(s[i], d[j])
        flows[i, j] = x
        basis.append((i, j))
        s[i] -= x
        d[j] -= x
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif s[i] <= d[j]:
            i += 1
        else:
            j += 1
    return flows, basis


def _tree_path(basis, m, src_row, dst_col):
    """Cells on the basis-tree path from row node ``src_row`` to column node ``dst_col``."""
    adj: dict[int, list[int]] = {}
    for i, j in basis:
        adj.setdefault(i, []).append(m + j)
        adj.setdefault(m + j, []).append(i)
    start, goal = src_row, m + dst_col
    parent = {start: start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        if u == goal:
            break
        for v in adj.get(u, ()):
            if v not in parent:
                parent[v] = u
                queue.append(v)
    path = []
    u = goal
    while u != start:
        p = parent[u]
        path.append((p, u - m) if p < m else (u, p - m))
        u = p
    return path[::-1]


def transport(supply, demand, costs, max_pivots: int | None = None) -> np.ndarray:
    """Optimal flow matrix for a balanced transportation problem."""
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    m, n = costs.shape
    flows, basis = _northwest_corner(supply, demand)
    if max_pivots is None:
        max_pivots = 50 * (m + n) ** 2
    scale = max(1.0, float(np.abs(costs).max()))
    degenerate_run = 0
    for _ in range(max_pivots):
        # dual potentials from the basis tree: u_i + v_j = c_ij on basic cells
        u = np.full(m, np.nan)
        v = np.full(n, np.nan)
        u[0] = 0.0
        rows_of_col: dict[int, list[int]] = {}
        cols_of_row: dict[int, list[int]] = {}
        for i, j in basis:
            cols_of_row.setdefault(i, []).append(j)
            rows_of_col.setdefault(j, []).append(i)
        stack = [(0, True)]
        while stack:
            node, is_row = stack.pop()
            if is_row:
                for j in cols_of_row.get(node, ()):
                    if np.isnan(v[j]):
                        v[j] = costs[node, j] - u[node]
                        stack.append((j, False))
            else:
                for i in rows_of_col.get(node, ()):
                    if np.isnan(u[i]):
                        u[i] = costs[i, node] - v[node]
                        stack.append((i, True))
        reduced = costs - u[:, None] - v[None, :]
        if degenerate_run > m + n:
            # Bland-style entering choice to break degenerate cycling
            neg = np.flatnonzero(reduced.ravel() < -TOL * scale)
            if neg.size == 0:
                return flows
            flat = int(neg[0])
        else:
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -TOL * scale:
                return flows
        ei, ej = divmod(flat, n)
        path = _tree_path(basis, m, ei, ej)
        # cycle: entering (+), then path cells alternate -, +, -, ... back to the entering row
        cycle = [(ei, ej)] + path[::-1]
        minus = cycle[1::2]
        plus = cycle[0::2]
        theta = min(flows[c] for c in minus)
        leave = next(c for c in minus if flows[c] == theta)
        for c in plus:
            flows[c] += theta
        for c in minus:
            flows[c] -= theta
        flows[leave] = 0.0
        basis.remove(leave)
        basis.append((ei, ej))
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
    raise RuntimeError("transportation simplex did not converge")


def emd_flow(a: Signature, b: Signature) -> FlowResult:
    """Optimal flow and normalized transport cost between two signatures.

    Unequal total masses are handled with a zero-cost dummy node, so the
    total moved flow equals the smaller of the two masses.
    """
    costs = ground_costs(a, b)
    sa, sb = a.weights, b.weights
    ta, tb = sa.sum(), sb.sum()
    m, n = costs.shape
    c = costs
    if not np.isclose(ta, tb, rtol=1e-12, atol=0.0):
        if ta > tb:
            sb = np.append(sb, ta - tb)
            c = np.hstack([costs, np.zeros((m, 1))])
        else:
            sa = np.append(sa, tb - ta)
            c = np.vstack([costs, np.zeros((1, n))])
    else:
        # tiny rounding differences would otherwise leave mass unmatched
        sb = sb * (ta / tb)
    flows = transport(sa, sb, c)[:m, :n]
    moved = flows.sum()
    return FlowResult(float(np.sum(flows * costs) / moved), flows, costs)


def emd_pair(a: Signature, b: Signature) -> float:
    return emd_flow(a, b).distance


def feature_bounds(datasets) -> tuple[np.ndarray, np.ndarray]:
    x = np.vstack([d.x for d in datasets])
    return x.min(axis=0), x.max(axis=0)


def signature_from_dataset(
    d: ClientDataset, bins: int, bounds: tuple[np.ndarray, np.ndarray] | None = None
) -> Signature:
    """Per-class histogram over a regular feature grid, normalized to unit mass.

    Centroids are bin centers tagged with the class; ``bounds`` fixes the grid
    so that signatures of different datasets are comparable.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if d.n == 0:
        raise ValueError("cannot build a signature of an empty dataset")
    lo, hi = bounds if bounds is not None else (d.x.min(axis=0), d.x.max(axis=0))
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    width = np.where(hi > lo, (hi - lo) / bins, 1.0)
    cell = np.clip(np.floor((d.x - lo) / width).astype(np.int64), 0, bins - 1)
    keys = np.column_stack([d.y, cell])
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    centers = lo + (uniq[:, 1:] + 0.5) * width
    diameter = float(np.linalg.norm(np.where(hi > lo, hi - lo, 0.0)))
    return Signature(centers, counts / d.n, uniq[:, 0], class_cost=diameter if diameter > 0 else 1.0)


def pooled(datasets) -> ClientDataset:
    n_classes = max(d.n_classes for d in datasets)
    return ClientDataset(
        -1, np.vstack([d.x for d in datasets]), np.concatenate([d.y for d in datasets]), n_classes
    )


def emd_population(datasets, bins: int, bounds=None) -> float:
    """Size-weighted mean EMD of each client distribution to the pooled one."""
    datasets = list(datasets)
    if len(datasets) < 2:
        raise ValueError("need at least two datasets")
    if len({d.dim for d in datasets}) != 1:
        raise ValueError("datasets live in different feature spaces")
    if bounds is None:
        bounds = feature_bounds(datasets)
    whole = signature_from_dataset(pooled(datasets), bins, bounds)
    total = sum(d.n for d in datasets)
    return sum(d.n * emd_pair(signature_from_dataset(d, bins, bounds), whole) for d in datasets) / total


def emd_matrix(datasets, bins: int, bounds=None) -> np.ndarray:
    datasets = list(datasets)
    if bounds is None:
        bounds = feature_bounds(datasets)
    sigs = [signature_from_dataset(d, bins, bounds) for d in datasets]
    k = len(sigs)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = emd_pair(sigs[i], sigs[j])
    return out
