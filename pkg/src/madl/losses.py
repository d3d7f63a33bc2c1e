"""Mean Absolute Directional Loss, its smooth surrogate, and the MAE baseline.

All functions take realized returns ``R`` and forecasts ``F`` as 1-d arrays of
equal, nonzero length.  ``sign`` is three-valued: ``sign(0) == 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class Loss(str, Enum):
    MADL = "MADL"
    MAE = "MAE"

    @classmethod
    def parse(cls, name) -> "Loss":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).upper())
        except ValueError:
            raise ValueError(f"unknown loss {name!r}; expected one of {[m.value for m in cls]}") from None


@dataclass(frozen=True)
class ForecastSeries:
    """Forecast returns aligned with the realized returns they are scored against."""

    dates: np.ndarray
    forecasts: np.ndarray
    realized: np.ndarray

    def __post_init__(self):
        if not len(self.dates) == len(self.forecasts) == len(self.realized):
            raise ValueError("dates, forecasts and realized returns must align")

    def __len__(self) -> int:
        return len(self.forecasts)


def _pair(realized, predicted):
    r = np.asarray(realized, dtype=np.float64).ravel()
    f = np.asarray(predicted, dtype=np.float64).ravel()
    if r.shape != f.shape:
        raise ValueError(f"length mismatch: {r.size} realized vs {f.size} predicted")
    if r.size == 0:
        raise ValueError("empty input")
    return r, f


def _steepness(k: float) -> float:
    if not k > 0:
        raise ValueError(f"steepness must be positive, got {k}")
    return float(k)


def madl_terms(realized, predicted) -> np.ndarray:
    """Per-observation MADL contributions ``-sign(R*F) * |R|``."""
    r, f = _pair(realized, predicted)
    # sign(R)*sign(F) rather than sign(R*F): the product can underflow to 0.
    return -(np.sign(r) * np.sign(f)) * np.abs(r)


def madl(realized, predicted) -> float:
    """(1/N) * sum(-sign(R*F) * |R|); negative means the forecast directions made money."""
    return float(np.mean(madl_terms(realized, predicted)))


def madl_sign_form(realized, predicted) -> float:
    """-(1/N) * sum(sign(F) * R), term-for-term equal to :func:`madl`."""
    r, f = _pair(realized, predicted)
    return float(np.mean(-(np.sign(f) * r)))


def madl_smooth(realized, predicted, k: float = 100.0) -> float:
    """Differentiable surrogate with ``tanh(k*F)`` in place of ``sign(F)``."""
    r, f = _pair(realized, predicted)
    k = _steepness(k)
    return float(np.mean(-np.tanh(k * f) * r))


def madl_smooth_grad(realized, predicted, k: float = 100.0) -> np.ndarray:
    r, f = _pair(realized, predicted)
    k = _steepness(k)
    t = np.tanh(k * f)
    return -(k * (1.0 - t * t) * r) / r.size


def mae_terms(realized, predicted) -> np.ndarray:
    r, f = _pair(realized, predicted)
    return np.abs(f - r)


def mae(realized, predicted) -> float:
    return float(np.mean(mae_terms(realized, predicted)))


def mae_subgrad(realized, predicted) -> np.ndarray:
    r, f = _pair(realized, predicted)
    return np.sign(f - r) / r.size


def exact_loss(loss: Loss | str, realized, predicted) -> float:
    """Score with the exact (non-smoothed) loss; used for validation and selection."""
    return madl(realized, predicted) if Loss.parse(loss) is Loss.MADL else mae(realized, predicted)


def training_loss_and_grad(loss: Loss | str, realized, predicted, k: float = 100.0) -> tuple[float, np.ndarray]:
    """Objective value and gradient w.r.t. forecasts as used inside gradient descent."""
    if Loss.parse(loss) is Loss.MADL:
        return madl_smooth(realized, predicted, k), madl_smooth_grad(realized, predicted, k)
    return mae(realized, predicted), mae_subgrad(realized, predicted)


@dataclass(frozen=True)
class DivergenceCase:
    """Two forecasts of one realized return that MAE and MADL rank oppositely."""

    realized: float
    forecast_a: float
    forecast_b: float
    note: str

    @property
    def mae_a(self) -> float:
        return mae([self.realized], [self.forecast_a])

    @property
    def mae_b(self) -> float:
        return mae([self.realized], [self.forecast_b])

    @property
    def madl_a(self) -> float:
        return madl([self.realized], [self.forecast_a])

    @property
    def madl_b(self) -> float:
        return madl([self.realized], [self.forecast_b])

    @property
    def mae_prefers_a(self) -> bool:
        return self.mae_a < self.mae_b

    @property
    def madl_prefers_a(self) -> bool:
        return self.madl_a < self.madl_b

    @property
    def flips(self) -> bool:
        return self.mae_prefers_a != self.madl_prefers_a and self.mae_a != self.mae_b and self.madl_a != self.madl_b


def divergence_case_catalog() -> list[DivergenceCase]:
    """Constructed cases where MAE and MADL disagree on which forecast is better.

    In every case forecast ``a`` sits closer to the realized return (lower
    MAE) but on the wrong side of zero, while ``b`` is further away but has
    the right sign (lower MADL).
    """
    return [
        DivergenceCase(0.01, -0.0001, 0.05, "tiny wrong-sign miss vs large right-sign overshoot"),
        DivergenceCase(0.002, -0.001, 0.02, "small positive move, wrong sign just below zero"),
        DivergenceCase(-0.03, 0.001, -0.09, "large drop, near-zero long vs deep short overshoot"),
        DivergenceCase(-0.005, 0.0005, -0.02, "small drop, marginal long vs oversized short"),
        DivergenceCase(0.04, -0.002, 0.12, "large rally, marginal short vs tripled long"),
    ]
