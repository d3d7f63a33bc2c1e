"""Simple OLS with homoskedastic standard errors and Student-t p-values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REGRESSION_COLUMNS = ("dep_var", "alpha", "alpha_se", "alpha_t", "alpha_p", "beta", "beta_se", "beta_t", "beta_p")

_TINY = 1e-300


def _betacf(a: float, b: float, x: float, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    # Lentz's method for the incomplete-beta continued fraction.
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if math.isnan(t):
        return math.nan
    if math.isinf(t):
        return 0.0
    # 2 * (1 - CDF(|t|)) == I_{df/(df+t^2)}(df/2, 1/2)
    t2 = t * t
    x = df / (df + t2)
    p = regularized_incomplete_beta(df / 2.0, 0.5, x)
    return min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class RegressionResult:
    alpha: float
    beta: float
    alpha_se: float
    beta_se: float
    alpha_t: float
    beta_t: float
    alpha_p: float
    beta_p: float
    n: int
    residual_variance: float

    def row(self, dep_var: str) -> dict:
        return dict(zip(REGRESSION_COLUMNS, (dep_var, self.alpha, self.alpha_se, self.alpha_t, self.alpha_p,
                                             self.beta, self.beta_se, self.beta_t, self.beta_p)))


def _t_and_p(est: float, se: float, df: int) -> tuple[float, float]:
    if se > 0:
        t = est / se
        return t, student_t_two_sided_p(t, df)
    if est == 0:
        return math.nan, math.nan
    # Perfect fit with a nonzero coefficient.
    return math.copysign(math.inf, est), 0.0


def ols_simple(y, x) -> RegressionResult:
    """Fit ``y = alpha + beta * x + e`` by closed-form least squares."""
    y = np.asarray(y, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: y has {y.size}, x has {x.size}")
    n = y.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    x_mean, y_mean = x.mean(), y.mean()
    dx = x - x_mean
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValueError("regressor is constant")
    beta = float(dx @ (y - y_mean)) / sxx
    alpha = float(y_mean - beta * x_mean)
    resid = y - alpha - beta * x
    df = n - 2
    s2 = float(resid @ resid) / df
    beta_se = math.sqrt(s2 / sxx)
    alpha_se = math.sqrt(s2 * (1.0 / n + x_mean * x_mean / sxx))
    alpha_t, alpha_p = _t_and_p(alpha, alpha_se, df)
    beta_t, beta_p = _t_and_p(beta, beta_se, df)
    return RegressionResult(alpha, beta, alpha_se, beta_se, alpha_t, beta_t, alpha_p, beta_p, n, s2)


BENCHMARK_ON_STRATEGY = "benchmark_on_strategy"
STRATEGY_ON_BENCHMARK = "strategy_on_benchmark"


def strategy_regressions(benchmark, strategies: dict, direction: str = BENCHMARK_ON_STRATEGY) -> dict[str, RegressionResult]:
    """One regression per named strategy return series.

    The default direction regresses benchmark (buy-and-hold) returns on the
    strategy's returns; ``strategy_on_benchmark`` swaps the roles.
    """
    if direction not in (BENCHMARK_ON_STRATEGY, STRATEGY_ON_BENCHMARK):
        raise ValueError(f"unknown regression direction {direction!r}")
    bench = getattr(benchmark, "returns", benchmark)
    bench = np.asarray(bench, dtype=np.float64)
    out = {}
    for name, series in strategies.items():
        s = np.asarray(getattr(series, "returns", series), dtype=np.float64)
        if s.shape != bench.shape:
            raise ValueError(f"strategy {name!r} is misaligned with the benchmark ({s.size} vs {bench.size})")
        out[name] = ols_simple(bench, s) if direction == BENCHMARK_ON_STRATEGY else ols_simple(s, bench)
    return out
