"""Federated simulation: clients, server aggregation strategies, experiment loop.

Strategies: FedAvg, FedProx, CFL (cosine-similarity bipartitioning) and
FedGMCC, which fits a chain between every pair of client models on a Monte
Carlo probe, groups models whose chain is flat enough into disjoint sets,
and averages each set along its fitted chains.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import ExperimentConfig, GmccSettings
from .curves import (
    CurveParams,
    FlatnessProfile,
    MonteCarloProbe,
    curve_average,
    default_grid,
    fit_curve,
    flatness,
    make_probe,
)
from .data import (
    ClientDataset,
    FeatureTransform,
    apply_concept_shift,
    apply_feature_transform,
    gen_base_task,
    minmax_bounds,
    minmax_scale,
)
from .nn import ModelArch
from .partition import anneal_to_target_emd, kmeans_seed_partition, partition_emd


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class DisjointSet:
    """Union-find over ``0..n-1`` with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, i: int, j: int) -> int:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return ri
        if self.size[ri] < self.size[rj] or (self.size[ri] == self.size[rj] and rj < ri):
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        return ri

    def connected(self, i: int, j: int) -> bool:
        return self.find(i) == self.find(j)

    def groups(self) -> list[list[int]]:
        """Member lists ordered by smallest member."""
        out: dict[int, list[int]] = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), []).append(i)
        return sorted(out.values(), key=lambda g: g[0])

    def __len__(self):
        return sum(1 for i in range(len(self.parent)) if self.find(i) == i)


# ---------------------------------------------------------------- clients


@dataclass
class ClientState:
    client_id: int
    train: ClientDataset
    val: ClientDataset
    weights: np.ndarray
    cluster: int = 0

    @property
    def n(self) -> int:
        return self.train.n


@dataclass(frozen=True)
class LocalTraining:
    epochs: int
    batch_size: int
    lr: float
    mu: float = 0.0


def client_update(
    arch: ModelArch,
    client: ClientState,
    global_w: np.ndarray,
    strategy: str,
    local: LocalTraining,
    seed: int,
) -> np.ndarray:
    """Local SGD from the model the server sent this client."""
    if strategy not in ("fedavg", "fedprox", "cfl", "fedgmcc"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if local.epochs == 0:
        return np.array(global_w, dtype=np.float64, copy=True)
    proximal = (local.mu, global_w) if strategy == "fedprox" else None
    return nn.sgd_train(
        arch, global_w, client.train.x, client.train.y,
        local.epochs, local.batch_size, local.lr, seed, proximal=proximal,
    )


# ------------------------------------------------------------ aggregation


def aggregate_fedavg(updates) -> np.ndarray:
    """Sample-size weighted mean of ``(weights, n_k)`` pairs."""
    updates = list(updates)
    if not updates:
        raise ValueError("nothing to aggregate")
    total = float(sum(n for _, n in updates))
    out = np.zeros_like(np.asarray(updates[0][0], dtype=np.float64))
    for w, n in updates:
        out += (n / total) * np.asarray(w, dtype=np.float64)
    return out


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    u = v / safe[:, None]
    sim = u @ u.T
    sim[norms == 0, :] = 0.0
    sim[:, norms == 0] = 0.0
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)


def bipartition(similarity: np.ndarray) -> tuple[list[int], list[int], float]:
    """Split minimizing the largest cross-part similarity.

    Cutting the weakest edge of a maximum-similarity spanning tree is optimal
    for this objective; the returned float is that largest cross similarity.
    """
    n = len(similarity)
    if n < 2:
        raise ValueError("need at least two members to split")
    edges = sorted(
        ((similarity[i, j], i, j) for i in range(n) for j in range(i + 1, n)),
        key=lambda e: (-e[0], e[1], e[2]),
    )
    ds = DisjointSet(n)
    for s, i, j in edges:
        if len(ds) == 2:
            break
        ds.union(i, j)
    a, b = ds.groups()
    cross = max(similarity[i, j] for i in a for j in b)
    return a, b, float(cross)


def aggregate_cfl(updates, prev_global, eps1: float = 0.2, gamma: float = 0.0):
    """One CFL server step for a single cluster.

    ``updates`` are ``(weights, n_k)``; ``prev_global`` is the model the
    cluster members started from. While the norm of the mean weight update is
    at least ``eps1`` this is FedAvg. Below it, members are bipartitioned by
    cosine similarity of their updates and the split is kept when the largest
    cross-part similarity is below ``gamma``. Returns ``[(member_idx, w)]``.
    """
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    updates = list(updates)
    prev = np.asarray(prev_global, dtype=np.float64)
    deltas = np.array([np.asarray(w) - prev for w, _ in updates])
    everyone = list(range(len(updates)))
    mean_norm = float(np.linalg.norm(deltas.mean(axis=0)))
    if mean_norm >= eps1 or len(updates) < 2:
        return [(everyone, aggregate_fedavg(updates))]
    a, b, cross = bipartition(cosine_matrix(deltas))
    if cross >= gamma:
        return [(everyone, aggregate_fedavg(updates))]
    return [(part, aggregate_fedavg([updates[i] for i in part])) for part in (a, b)]


@dataclass
class ClusterSet:
    forest: DisjointSet
    curves: dict[tuple[int, int], CurveParams] = field(default_factory=dict)
    profiles: dict[tuple[int, int], FlatnessProfile] = field(default_factory=dict)
    connected: list[tuple[int, int]] = field(default_factory=list)

    @property
    def M(self) -> int:
        return len(self.forest)

    def groups(self) -> list[list[int]]:
        return self.forest.groups()

    def pair_stats(self) -> list[float]:
        return [self.profiles[p].max_du for p in sorted(self.profiles)]


@dataclass
class GmccResult:
    clusters: ClusterSet
    models: list[tuple[list[int], np.ndarray]]
    epsilon: float

    def model_for(self, client: int) -> np.ndarray:
        for members, w in self.models:
            if client in members:
                return w
        raise KeyError(client)


def gmcc_round(
    arch: ModelArch,
    weights,
    cfg: GmccSettings,
    probe: MonteCarloProbe,
    epsilon: float | None,
    seed: int = 0,
    pool=None,
) -> GmccResult:
    """Cluster client models by chain flatness and aggregate along the chains.

    With ``epsilon=None`` every pair is fitted first and the budget is set to
    the median pair statistic. Pairs already in one set are skipped. A set's
    model is the mean (or, with ``cfg.normalize`` off, the sum) of the chain
    averages of its connected pairs; singletons keep their own weights.
    An executor passed as ``pool`` runs the all-pairs fits in parallel; every
    pair has its own seed, so the result does not depend on scheduling.
    """
    weights = [nn.check_weights(arch, w) for w in weights]
    k = len(weights)
    grid = default_grid(cfg.grid_points)
    cs = ClusterSet(DisjointSet(k))

    def solve(pair):
        i, j = pair
        c = fit_curve(
            arch, weights[i], weights[j], probe, eta=cfg.eta, steps=cfg.steps,
            seed=derive_seed(seed, i, j), init=cfg.theta_init, u_grid=grid,
        )
        return c, flatness(arch, c, probe)

    def fit(i, j):
        if (i, j) not in cs.curves:
            cs.curves[(i, j)], cs.profiles[(i, j)] = solve((i, j))
        return cs.profiles[(i, j)]

    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    if epsilon is None:
        if pool is not None:
            for p, (c, prof) in zip(pairs, pool.map(solve, pairs)):
                cs.curves[p], cs.profiles[p] = c, prof
        if not pairs:
            epsilon = 0.0
        else:
            epsilon = float(np.median([fit(i, j).max_du for i, j in pairs]))
    for i, j in pairs:
        if cs.forest.connected(i, j):
            continue
        if fit(i, j).max_du <= epsilon:
            cs.forest.union(i, j)
            cs.connected.append((i, j))
    models = []
    for members in cs.groups():
        if len(members) == 1:
            models.append((members, weights[members[0]].copy()))
            continue
        root = cs.forest.find(members[0])
        avgs = [curve_average(cs.curves[p]) for p in cs.connected if cs.forest.find(p[0]) == root]
        agg = np.sum(avgs, axis=0)
        if cfg.normalize:
            agg = agg / len(avgs)
        models.append((members, agg))
    return GmccResult(cs, models, float(epsilon))


def adapt_epsilon(
    epsilon: float | None, pair_stats, n_clusters: int, mode: str = "percentile"
) -> float:
    """Next flatness budget.

    Without a current budget this is the median of ``pair_stats``. Otherwise
    the budget steps to the next 5th-percentile level of ``pair_stats`` above
    it when more than one cluster formed, and to the next one below it
    otherwise; ``mode="multiplicative"`` scales it by 1.05 / 0.95 instead.
    """
    stats = np.asarray(list(pair_stats), dtype=np.float64)
    if epsilon is None:
        if stats.size == 0:
            raise ValueError("no pair statistics to initialise epsilon from")
        return float(np.median(stats))
    if mode == "multiplicative":
        return float(epsilon * (1.05 if n_clusters > 1 else 0.95))
    if mode != "percentile":
        raise ValueError(f"unknown adaptation mode {mode!r}")
    if stats.size == 0:
        return float(epsilon)
    levels = np.percentile(stats, np.arange(0, 101, 5))
    if n_clusters > 1:
        above = levels[levels > epsilon]
        return float(above.min()) if above.size else float(epsilon)
    below = levels[levels < epsilon]
    return float(below.max()) if below.size else float(epsilon)


# ------------------------------------------------------------- experiment


@dataclass
class RoundMetrics:
    round: int
    cluster: int
    members: list[int]
    n_clusters: int
    n_val: int
    val_loss: float
    val_acc: float
    train_loss: float


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    wall_clock: list[float]
    epsilons: list[float | None]
    partition_emd: float
    partition_info: dict

    def rounds(self) -> int:
        return max(m.round for m in self.metrics)

    def final(self) -> list[RoundMetrics]:
        r = self.rounds()
        return [m for m in self.metrics if m.round == r]

    def accuracy(self, round_index: int | None = None) -> float:
        """Validation accuracy with every client scored on its own model."""
        r = self.rounds() if round_index is None else round_index
        rows = [m for m in self.metrics if m.round == r]
        total = sum(m.n_val for m in rows)
        return sum(m.val_acc * m.n_val for m in rows) / total


def arch_for(cfg: ExperimentConfig) -> ModelArch:
    return ModelArch((cfg.task.dim, *cfg.task.hidden, cfg.task.n_classes))


def build_clients(cfg: ExperimentConfig) -> tuple[list[ClientDataset], float, dict]:
    """Generate, normalize, partition and perturb the client datasets."""
    t = cfg.task
    base = gen_base_task(t.n, t.n_classes, cfg.seeds.data, t.dim, t.separation)
    lo, hi = minmax_bounds(base.x)
    base = minmax_scale(base, lo, hi)
    k = cfg.clients
    info: dict = {"method": cfg.partition.method}
    if cfg.partition.method == "kmeans" and k >= 2:
        plan = kmeans_seed_partition(base, k, cfg.partition.seed, cfg.partition.bins)
        info["seed_emd"] = plan.achieved_emd
        if cfg.partition.target_emd is not None:
            plan = anneal_to_target_emd(
                plan, base, cfg.partition.target_emd, cfg.partition.seed,
                max_iters=cfg.partition.max_iters, bins=cfg.partition.bins,
                move_batch=cfg.partition.move_batch,
            )
        info.update(iterations=plan.iterations, reached=plan.reached, shapiro_p=plan.shapiro_p)
        assign = plan.assignments
    else:
        rng = np.random.default_rng(cfg.partition.seed)
        assign = np.empty(base.n, dtype=np.int64)
        assign[rng.permutation(base.n)] = np.arange(base.n) % k
    datasets = [base.subset(np.flatnonzero(assign == c), c) for c in range(k)]
    emd = partition_emd(base, assign, k, cfg.partition.bins) if k >= 2 else 0.0
    if t.groups:
        out = []
        c = 0
        for gi, g in enumerate(t.groups):
            for _ in range(g.clients):
                d = datasets[c]
                if g.rotation:
                    d = apply_feature_transform(d, FeatureTransform("rotation", angle=g.rotation, center=0.5))
                if g.scale:
                    d = apply_feature_transform(d, FeatureTransform("scale", factors=tuple(g.scale), center=0.5))
                if g.flip:
                    d = apply_feature_transform(d, FeatureTransform("flip", axes=tuple(g.flip), center=0.5))
                if g.concept_shift:
                    d = apply_concept_shift(d, g.concept_shift, derive_seed(cfg.seeds.data, 7, c))
                out.append(d)
                c += 1
        datasets = out
    return datasets, emd, info


def train_val_split(d: ClientDataset, val_fraction: float, seed: int) -> tuple[ClientDataset, ClientDataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(d.n)
    n_val = max(1, int(round(val_fraction * d.n)))
    if n_val >= d.n:
        n_val = d.n - 1
    return d.subset(np.sort(order[n_val:])), d.subset(np.sort(order[:n_val]))


def _cluster_metrics(arch, round_index, clusters, clients) -> list[RoundMetrics]:
    rows = []
    for ci, (members, w) in enumerate(clusters):
        xv = np.vstack([clients[m].val.x for m in members])
        yv = np.concatenate([clients[m].val.y for m in members])
        xt = np.vstack([clients[m].train.x for m in members])
        yt = np.concatenate([clients[m].train.y for m in members])
        rows.append(RoundMetrics(
            round=round_index,
            cluster=ci,
            members=list(members),
            n_clusters=len(clusters),
            n_val=len(yv),
            val_loss=nn.cross_entropy_loss(arch, w, xv, yv),
            val_acc=nn.accuracy(arch, w, xv, yv),
            train_loss=nn.cross_entropy_loss(arch, w, xt, yt),
        ))
    return rows


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Full simulation: data, partition, rounds of local training and aggregation."""
    cfg.validate()
    arch = arch_for(cfg)
    datasets, emd, info = build_clients(cfg)
    clients = []
    w0 = arch.init(cfg.seeds.init)
    for d in datasets:
        tr, va = train_val_split(d, cfg.val_fraction, derive_seed(cfg.seeds.data, 11, d.client_id))
        clients.append(ClientState(d.client_id, tr, va, w0.copy()))
    k = len(clients)
    local = LocalTraining(cfg.local_epochs, cfg.batch_size, cfg.lr, cfg.mu)
    probe = make_probe(cfg.gmcc.n_mc, cfg.task.dim, cfg.seeds.probe)

    clusters: list[tuple[list[int], np.ndarray]] = [(list(range(k)), w0.copy())]
    metrics = _cluster_metrics(arch, 0, clusters, clients)
    wall = [0.0]
    eps = cfg.gmcc.epsilon
    epsilons: list[float | None] = [eps]
    cfl_groups = [list(range(k))]

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for r in range(1, cfg.rounds + 1):
            start = time.perf_counter()
            sent = [c.weights for c in clients]

            def work(i):
                return client_update(arch, clients[i], sent[i], cfg.strategy, local,
                                     derive_seed(cfg.seeds.train, r, i))

            new = list(pool.map(work, range(k))) if pool else [work(i) for i in range(k)]
            sizes = [c.n for c in clients]
            if cfg.strategy in ("fedavg", "fedprox") or k == 1:
                clusters = [(list(range(k)), aggregate_fedavg(zip(new, sizes)))]
            elif cfg.strategy == "cfl":
                clusters = []
                for group in cfl_groups:
                    parts = aggregate_cfl(
                        [(new[i], sizes[i]) for i in group], sent[group[0]],
                        cfg.cfl.eps1, cfg.cfl.gamma,
                    )
                    clusters.extend(([group[i] for i in idx], w) for idx, w in parts)
                clusters.sort(key=lambda c: c[0][0])
                cfl_groups = [m for m, _ in clusters]
            else:
                result = gmcc_round(arch, new, cfg.gmcc, probe, eps,
                                    seed=derive_seed(cfg.seeds.probe, r), pool=pool)
                clusters = result.models
                used = result.epsilon
                if cfg.gmcc.adapt:
                    eps = adapt_epsilon(used, result.clusters.pair_stats(), result.clusters.M,
                                        cfg.gmcc.adapt_mode)
                epsilons.append(used)
            for ci, (members, w) in enumerate(clusters):
                for m in members:
                    clients[m].weights = w
                    clients[m].cluster = ci
            metrics.extend(_cluster_metrics(arch, r, clusters, clients))
            wall.append(time.perf_counter() - start)
    finally:
        if pool:
            pool.shutdown()
    return ExperimentResult(metrics, wall, epsilons, emd, info)
