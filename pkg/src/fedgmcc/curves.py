"""Curves between two models in weight space, probed in output space.

A one-bend polygonal chain joins ``w_k`` (u=0) to ``w_l`` (u=1) through the
bend ``theta`` (u=0.5). The bend is fitted by SGD so that the models along
the chain agree with ``w_l`` on a uniform Monte Carlo probe set, with no
access to any client data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ModelArch

DEFAULT_GRID = 21
DEFAULT_STEPS = 2000
DEFAULT_ETA = 0.1
DEFAULT_N_MC = 256


class CurveDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MonteCarloProbe:
    inputs: np.ndarray
    seed: int

    def __len__(self):
        return len(self.inputs)


def make_probe(n: int, dim: int, seed: int) -> MonteCarloProbe:
    if n < 1:
        raise ValueError("probe needs at least one row")
    return MonteCarloProbe(np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, dim)), seed)


def default_grid(points: int = DEFAULT_GRID) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def chain_coefficients(u: float) -> tuple[float, float, float]:
    """Weights ``(c_k, c_theta, c_l)`` with ``gamma(u) = c_k w_k + c_theta theta + c_l w_l``."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    if u < 0.5:
        return 1.0 - 2.0 * u, 2.0 * u, 0.0
    return 0.0, 2.0 - 2.0 * u, 2.0 * u - 1.0


@dataclass
class CurveParams:
    theta: np.ndarray
    w_k: np.ndarray
    w_l: np.ndarray
    u_grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.u_grid, dtype=np.float64)
        if g.ndim != 1 or g[0] != 0.0 or g[-1] != 1.0 or np.any(np.diff(g) <= 0):
            raise ValueError("u_grid must be strictly increasing from 0 to 1")
        self.u_grid = g
        if not (self.theta.shape == self.w_k.shape == self.w_l.shape):
            raise ValueError("bend and endpoints must share one architecture")

    def point(self, u: float) -> np.ndarray:
        return chain_point(self, u)


def chain_point(c: CurveParams, u: float) -> np.ndarray:
    # endpoints are returned as copies so boundary identities hold bit-exactly
    if u == 0.0:
        return c.w_k.copy()
    if u == 1.0:
        return c.w_l.copy()
    ck, ct, cl = chain_coefficients(u)
    if u < 0.5:
        return ct * c.theta + ck * c.w_k
    return cl * c.w_l + ct * c.theta


def curve_average(c: CurveParams) -> np.ndarray:
    """Uniform mean of the chain over u in [0, 1], in closed form."""
    return (c.w_k + c.w_l) / 4.0 + c.theta / 2.0


def initial_theta(w_k: np.ndarray, w_l: np.ndarray, init: str = "sum") -> np.ndarray:
    if init == "sum":
        return w_k + w_l
    if init == "midpoint":
        return 0.5 * (w_k + w_l)
    raise ValueError(f"unknown bend initialisation {init!r}")


def curve_loss(arch: ModelArch, c: CurveParams, u: float, probe) -> float:
    """Output-space MSE between ``w_l`` and the chain model at ``u``."""
    x = probe.inputs if isinstance(probe, MonteCarloProbe) else probe
    return nn.mse_output_loss(arch, c.w_l, chain_point(c, u), x)


def curve_loss_grad_theta(arch: ModelArch, c: CurveParams, u: float, probe) -> np.ndarray:
    """Gradient of :func:`curve_loss` w.r.t. the bend (chain rule through gamma)."""
    x = probe.inputs if isinstance(probe, MonteCarloProbe) else probe
    _, ct, _ = chain_coefficients(u)
    if ct == 0.0:
        return np.zeros_like(c.theta)
    g = nn.grad_loss(arch, chain_point(c, u), x, kind="mse", target=c.w_l)
    return ct * g


def grid_losses(arch: ModelArch, c: CurveParams, probe, grid=None) -> np.ndarray:
    x = probe.inputs if isinstance(probe, MonteCarloProbe) else probe
    grid = c.u_grid if grid is None else np.asarray(grid)
    target = nn.forward(arch, c.w_l, x)
    out = np.empty(len(grid))
    for i, u in enumerate(grid):
        d = nn.forward(arch, chain_point(c, float(u)), x) - target
        out[i] = np.mean(np.sum(d * d, axis=1))
    return out


def fit_curve(
    arch: ModelArch,
    w_k,
    w_l,
    probe: MonteCarloProbe,
    eta: float = DEFAULT_ETA,
    steps: int = DEFAULT_STEPS,
    seed: int = 0,
    init: str = "sum",
    u_grid=None,
) -> CurveParams:
    """Fit the chain bend by single-sample SGD.

    Each step draws ``u ~ U(0, 1)`` and one probe row and descends
    ``||f(x, w_l) - f(x, gamma(u))||^2`` w.r.t. the bend.
    """
    w_k = nn.check_weights(arch, w_k).copy()
    w_l = nn.check_weights(arch, w_l).copy()
    if eta <= 0:
        raise ValueError("curve learning rate must be positive")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    grid = default_grid() if u_grid is None else np.asarray(u_grid, dtype=np.float64)
    theta = initial_theta(w_k, w_l, init)
    x_all = nn.check_inputs(arch, probe.inputs)
    target = nn.forward(arch, w_l, x_all)
    rng = np.random.default_rng(seed)
    us = rng.uniform(0.0, 1.0, size=steps)
    rows = rng.integers(len(x_all), size=steps)
    for u, r in zip(us, rows):
        if u < 0.5:
            ct = 2.0 * u
            gamma = ct * theta + (1.0 - 2.0 * u) * w_k
        else:
            ct = 2.0 - 2.0 * u
            gamma = (2.0 * u - 1.0) * w_l + ct * theta
        layers = nn.unflatten(arch, gamma)
        x = x_all[r:r + 1]
        p, acts, pres = nn._forward(layers, x)
        diff = p - target[r:r + 1]
        loss = float(np.sum(diff * diff))
        if not np.isfinite(loss):
            raise CurveDivergenceError(f"curve loss became {loss} at u={u:.3f}")
        dlogits = nn.softmax_vjp(p, 2.0 * diff)
        g = nn._backward(layers, acts, pres, dlogits)
        theta -= eta * ct * g
        if not np.all(np.isfinite(theta)):
            raise CurveDivergenceError("bend weights became non-finite")
    return CurveParams(theta, w_k, w_l, grid)


@dataclass
class FlatnessProfile:
    u_grid: np.ndarray
    losses: np.ndarray
    max_du: float

    @property
    def max_loss(self) -> float:
        return float(self.losses.max())

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean())


def flatness(arch: ModelArch, c: CurveParams, probe, w_l=None) -> FlatnessProfile:
    """Probe losses along the grid and the steepest finite-difference slope."""
    if len(c.u_grid) < 11:
        raise ValueError("flatness needs a u-grid of at least 11 points")
    if w_l is not None and not np.array_equal(w_l, c.w_l):
        c = CurveParams(c.theta, c.w_k, np.asarray(w_l, dtype=np.float64), c.u_grid)
    losses = grid_losses(arch, c, probe)
    slopes = np.abs(np.diff(losses) / np.diff(c.u_grid))
    return FlatnessProfile(c.u_grid.copy(), losses, float(slopes.max()))


def straight_curve(w_k, w_l, u_grid=None) -> CurveParams:
    """Chain whose bend is the midpoint, i.e. the straight segment."""
    grid = default_grid() if u_grid is None else u_grid
    w_k = np.asarray(w_k, dtype=np.float64)
    w_l = np.asarray(w_l, dtype=np.float64)
    return CurveParams(0.5 * (w_k + w_l), w_k, w_l, grid)
