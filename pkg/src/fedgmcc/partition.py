"""K-way non-IID partitioning with a controllable population EMD.

A k-means split of the feature space gives a maximally heterogeneous start.
Annealing then repeatedly takes random samples from the client farthest
from the pooled distribution and exchanges them with random samples of the
client nearest to it (falling back to the next-nearest when the exchange
would raise the population EMD), until the target is reached and the
pairwise client EMDs look normally distributed. Client sizes never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClientDataset
from .emd import emd_pair, feature_bounds, signature_from_dataset
from .normality import shapiro_wilk

DEFAULT_BINS = 4
TARGET_RTOL = 0.05


@dataclass
class PartitionPlan:
    assignments: np.ndarray
    achieved_emd: float
    iterations: int = 0
    moves: int = 0
    reached: bool = True
    shapiro_p: float | None = None
    history: list[float] = field(default_factory=list)

    @property
    def n_clients(self) -> int:
        return int(self.assignments.max()) + 1

    def sizes(self, k: int | None = None) -> np.ndarray:
        return np.bincount(self.assignments, minlength=k or self.n_clients)

    def split(self, data: ClientDataset) -> list[ClientDataset]:
        return [data.subset(np.flatnonzero(self.assignments == k), k) for k in range(self.n_clients)]


def kmeans(x: np.ndarray, k: int, seed: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations from a seeded k-means++ start; no cluster is left empty."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = rng.choice(n, p=d2 / total)
        else:
            nxt = rng.integers(n)
        centers.append(x[nxt])
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    centers = np.array(centers)
    labels = None
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new = dist.argmin(axis=1)
        for c in range(k):
            if not np.any(new == c):
                # steal the point worst served by its current center
                counts = np.bincount(new, minlength=k)
                worst = dist[np.arange(n), new].copy()
                worst[counts[new] <= 1] = -1.0
                p = int(worst.argmax())
                new[p] = c
                dist[p, c] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centers = np.array([x[labels == c].mean(axis=0) for c in range(k)])
    return labels


def _population(sizes, dists) -> float:
    return float(np.dot(sizes, dists) / sizes.sum())


class _State:
    """Per-client signatures and distances to the (fixed) pooled distribution."""

    def __init__(self, data: ClientDataset, assignments: np.ndarray, k: int, bins: int):
        self.data = data
        self.bins = bins
        self.bounds = feature_bounds([data])
        self.whole = signature_from_dataset(data, bins, self.bounds)
        self.assign = assignments.copy()
        self.k = k
        self.sigs = [self._sig(c) for c in range(k)]
        self.dists = np.array([emd_pair(s, self.whole) for s in self.sigs])
        self.sizes = np.bincount(self.assign, minlength=k).astype(np.float64)

    def _sig(self, c, assign=None):
        assign = self.assign if assign is None else assign
        return signature_from_dataset(self.data.subset(np.flatnonzero(assign == c)), self.bins, self.bounds)

    @property
    def emd(self) -> float:
        return _population(self.sizes, self.dists)

    def pairwise(self) -> np.ndarray:
        return np.array(
            [emd_pair(self.sigs[i], self.sigs[j]) for i in range(self.k) for j in range(i + 1, self.k)]
        )


def partition_emd(data: ClientDataset, assignments: np.ndarray, k: int, bins: int = DEFAULT_BINS) -> float:
    return _State(data, assignments, k, bins).emd


def kmeans_seed_partition(data: ClientDataset, k: int, seed: int, bins: int = DEFAULT_BINS) -> PartitionPlan:
    if k < 2:
        raise ValueError("need at least 2 clients")
    labels = kmeans(data.x, k, seed)
    e = partition_emd(data, labels, k, bins)
    return PartitionPlan(labels, e, 0, 0, True, None, [e])


def _shapiro_gate(values: np.ndarray, alpha: float) -> tuple[bool, float | None]:
    # fewer than 3 pairwise distances, or all equal: nothing to test
    if len(values) < 3 or np.ptp(values) <= 1e-12:
        return True, None
    _, p = shapiro_wilk(values)
    return p > alpha, p


def anneal_to_target_emd(
    plan: PartitionPlan,
    data: ClientDataset,
    target_emd: float,
    seed: int,
    max_iters: int = 1000,
    bins: int = DEFAULT_BINS,
    move_batch: int | None = None,
    alpha: float = 0.05,
) -> PartitionPlan:
    """Lower the population EMD of ``plan`` toward ``target_emd``.

    Stops once the EMD is within 5% above the target and the pairwise client
    EMDs pass Shapiro-Wilk at ``alpha``. If that never happens within
    ``max_iters`` the best plan so far is returned with ``reached=False``.
    """
    if target_emd < 0:
        raise ValueError("target EMD must be non-negative")
    k = plan.n_clients
    rng = np.random.default_rng(seed)
    state = _State(data, plan.assignments, k, bins)
    if move_batch is None:
        move_batch = max(1, data.n // 1000)
    current = state.emd
    history = [current]
    moves = 0

    def close_enough(e):
        return e <= target_emd * (1 + TARGET_RTOL) + 1e-12

    if close_enough(current):
        ok, p = _shapiro_gate(state.pairwise(), alpha)
        return PartitionPlan(state.assign.copy(), current, 0, 0, True, p, history)

    shapiro_p = None
    it = 0
    for it in range(1, max_iters + 1):
        src = int(np.argmax(state.dists))
        members = np.flatnonzero(state.assign == src)
        near = sorted(
            (c for c in range(k) if c != src),
            key=lambda c: (emd_pair(state.sigs[src], state.sigs[c]), c),
        )
        accepted = False
        for dst in near:
            back = np.flatnonzero(state.assign == dst)
            take = min(move_batch, len(members), len(back))
            out = rng.choice(members, size=take, replace=False)
            into = rng.choice(back, size=take, replace=False)
            trial = state.assign.copy()
            trial[out] = dst
            trial[into] = src
            sig_src, sig_dst = state._sig(src, trial), state._sig(dst, trial)
            dists = state.dists.copy()
            dists[src] = emd_pair(sig_src, state.whole)
            dists[dst] = emd_pair(sig_dst, state.whole)
            candidate = _population(state.sizes, dists)
            if candidate <= current:
                state.assign, state.dists = trial, dists
                state.sigs[src], state.sigs[dst] = sig_src, sig_dst
                current = candidate
                history.append(current)
                moves += 2 * take
                accepted = True
                break
        if not accepted:
            break
        if close_enough(current):
            ok, shapiro_p = _shapiro_gate(state.pairwise(), alpha)
            if ok:
                return PartitionPlan(state.assign.copy(), current, it, moves, True, shapiro_p, history)
    return PartitionPlan(state.assign.copy(), current, it, moves, False, shapiro_p, history)
