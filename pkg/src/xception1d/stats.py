"""Summary statistics over seeds and the pooled two-sample Student's t-test."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence


def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the continued fraction converges fastest on the side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_tailed(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


class TTestResult(NamedTuple):
    t: float
    p: float
    df: int


def t_test(mean_a: float, std_a: float, n_a: int, mean_b: float, std_b: float, n_b: int) -> TTestResult:
    """Two-tailed pooled-variance two-sample t-test from summary statistics."""
    if n_a < 2 or n_b < 2:
        raise ValueError("each group needs at least two observations")
    if std_a < 0 or std_b < 0:
        raise ValueError("standard deviations must be non-negative")
    df = n_a + n_b - 2
    pooled = ((n_a - 1) * std_a ** 2 + (n_b - 1) * std_b ** 2) / df
    se = math.sqrt(pooled * (1.0 / n_a + 1.0 / n_b))
    diff = mean_a - mean_b
    if se == 0.0:
        if diff == 0:
            return TTestResult(0.0, 1.0, df)
        return TTestResult(math.copysign(math.inf, diff), 0.0, df)
    t = diff / se
    return TTestResult(t, t_sf_two_tailed(t, df), df)


class MeanStd(NamedTuple):
    mean: float
    std: float
    n: int


def mean_std(values: Sequence[float]) -> MeanStd:
    """Mean and sample standard deviation (n - 1 denominator)."""
    values = [float(v) for v in values]
    n = len(values)
    if n < 2:
        raise ValueError("need at least two values for a sample standard deviation")
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return MeanStd(mean, math.sqrt(var), n)


def format_cell(mean: float, std: float) -> str:
    """Accuracy fractions as a percent table cell, e.g. '93.10 ± 0.25'."""
    return f"{100 * mean:.2f} ± {100 * std:.2f}"
