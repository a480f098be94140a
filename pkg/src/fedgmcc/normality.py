"""Shapiro-Wilk W test (Royston's AS R94 approximation, 3 <= n <= 5000)."""

from __future__ import annotations

import math
from statistics import NormalDist

import numpy as np

_STD = NormalDist()

_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coef, x):
    return sum(c * x**i for i, c in enumerate(coef))


def shapiro_coefficients(n: int) -> np.ndarray:
    """Antisymmetric weights ``a`` with ``sum(a**2) == 1`` for sorted samples."""
    if n < 3:
        raise ValueError("Shapiro-Wilk needs at least 3 observations")
    half = n // 2
    if n == 3:
        upper = np.array([math.sqrt(0.5)])
    else:
        m = np.array([_STD.inv_cdf((i - 0.375) / (n + 0.25)) for i in range(1, half + 1)])
        summ2 = 2.0 * np.sum(m * m)
        ssumm2 = math.sqrt(summ2)
        rsn = 1.0 / math.sqrt(n)
        a1 = _poly(_C1, rsn) - m[0] / ssumm2
        if n > 5:
            a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
            fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
            upper = -m / fac
            upper[1] = a2
        else:
            fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
            upper = -m / fac
        upper[0] = a1
    a = np.zeros(n)
    a[:half] = -upper
    a[n - half:] = upper[::-1]
    return a


def shapiro_wilk(x) -> tuple[float, float]:
    """Return ``(W, p_value)``; small p rejects normality."""
    x = np.sort(np.asarray(x, dtype=np.float64).ravel())
    n = len(x)
    a = shapiro_coefficients(n)
    ss = np.sum((x - x.mean()) ** 2)
    if ss <= 0:
        raise ValueError("all observations are identical")
    w = float(np.dot(a, x) ** 2 / ss)
    w = min(w, 1.0)
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3)
        return w, max(p, 0.0)
    w1 = 1.0 - w
    if w1 <= 0:
        return w, 1.0
    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return w, 1e-99
        y = -math.log(gamma - y)
        mean = _poly(_C3, n)
        sd = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        mean = _poly(_C5, ln)
        sd = math.exp(_poly(_C6, ln))
    return w, 1.0 - NormalDist(mean, sd).cdf(y)


def is_normal(x, alpha: float = 0.05) -> bool:
    return shapiro_wilk(x)[1] > alpha
