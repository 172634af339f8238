"""Staircase approximations of quantile functions.

A distribution is approximated by N Dirac atoms: the unit interval is cut at
fractions 0 = tau_0 < tau_1 < ... < tau_N = 1 and the quantile curve is
replaced on each segment [tau_i, tau_i+1) by the constant theta_i.  The
quality measure is the 1-Wasserstein error

    W1 = sum_i  integral_{tau_i}^{tau_i+1} |F^-1(w) - theta_i| dw,

minimised over theta by taking each theta_i at the segment midpoint
fraction, and over the interior fractions by the analytic derivative

    dW1/dtau_i = 2 F^-1(tau_i) - F^-1(mid_i) - F^-1(mid_{i-1}).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .distributions import QuantileFunction
from .quadrature import IntegrationError, adaptive_simpson


@dataclass(frozen=True)
class FractionSet:
    """Interior cut fractions; the 0 and 1 endpoints are implicit."""

    interior: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "interior", tuple(float(t) for t in self.interior))
        prev = 0.0
        for t in self.interior:
            if not math.isfinite(t) or not 0.0 < t < 1.0:
                raise ValueError(f"interior fraction {t!r} outside (0, 1)")
            if t <= prev:
                raise ValueError("interior fractions must be strictly increasing")
            prev = t

    @classmethod
    def equally_spaced(cls, n_segments: int) -> "FractionSet":
        if n_segments < 1:
            raise ValueError("need at least one segment")
        return cls(tuple(i / n_segments for i in range(1, n_segments)))

    @property
    def n_segments(self) -> int:
        return len(self.interior) + 1

    @cached_property
    def boundaries(self) -> np.ndarray:
        """All cut points including 0 and 1, length n_segments + 1."""
        return np.concatenate(([0.0], self.interior, [1.0]))

    @cached_property
    def midpoints(self) -> np.ndarray:
        b = self.boundaries
        return 0.5 * (b[:-1] + b[1:])

    @cached_property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)


def random_fraction_set(n_segments: int, rng: np.random.Generator) -> FractionSet:
    """Sorted i.i.d. uniform interior fractions (redrawn on the rare tie)."""
    while True:
        draw = np.sort(rng.uniform(0.0, 1.0, size=n_segments - 1))
        if draw.size == 0 or (
            np.all(np.diff(draw) > 0.0) and 0.0 < draw[0] and draw[-1] < 1.0
        ):
            return FractionSet(tuple(draw))


@dataclass(frozen=True)
class StaircaseApproximation:
    """A fraction set together with one value per segment."""

    fractions: FractionSet
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != self.fractions.n_segments:
            raise ValueError(
                f"need {self.fractions.n_segments} values, got {len(self.values)}"
            )
        for v in self.values:
            if not math.isfinite(v):
                raise ValueError(f"segment value {v!r} not finite")

    def value_at(self, omega: float) -> float:
        """The projected quantile function, right-continuous in omega."""
        if not 0.0 <= omega <= 1.0:
            raise ValueError(f"fraction {omega!r} outside [0, 1]")
        b = self.fractions.boundaries
        # right-continuity: omega == tau_i selects segment i
        k = bisect_right(b.tolist(), omega) - 1
        if k >= len(self.values):
            k = len(self.values) - 1
        return self.values[k]

    def values_at(self, omegas: np.ndarray) -> np.ndarray:
        b = self.fractions.boundaries
        idx = np.searchsorted(b, omegas, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return np.asarray(self.values)[idx]


def optimal_values(qf: QuantileFunction, fractions: FractionSet) -> StaircaseApproximation:
    """Per-segment W1-optimal values: the quantile at each midpoint fraction."""
    vals = tuple(qf.evaluate(m) for m in fractions.midpoints)
    return StaircaseApproximation(fractions, vals)


def w1_error(
    qf: QuantileFunction,
    approx: StaircaseApproximation,
    tol: float = 1e-8,
    max_depth: int = 40,
) -> float:
    """1-Wasserstein distance between ``qf`` and its staircase approximation.

    Each segment is integrated by adaptive Simpson to absolute tolerance
    ``tol``; the integrand has at most one kink per segment (where the curve
    crosses the segment value), which the refinement resolves.
    """
    b = approx.fractions.boundaries
    total = 0.0
    for i, theta in enumerate(approx.values):
        f = qf.evaluate
        try:
            total += adaptive_simpson(
                lambda w, t=theta: abs(f(w) - t), b[i], b[i + 1], tol=tol, max_depth=max_depth
            )
        except IntegrationError as err:
            raise IntegrationError(str(err), segment=i) from None
    return total


def w1_fraction_gradient(qf: QuantileFunction, fractions: FractionSet) -> np.ndarray:
    """d W1 / d tau_i for the interior fractions, values held at midpoints.

    The movement of the midpoints cancels in the derivative, leaving

        g_i = 2 F^-1(tau_i) - F^-1(mid_i) - F^-1(mid_{i-1}).
    """
    mids = fractions.midpoints
    grad = np.empty(fractions.n_segments - 1)
    for k, t in enumerate(fractions.interior):
        grad[k] = 2.0 * qf.evaluate(t) - qf.evaluate(mids[k + 1]) - qf.evaluate(mids[k])
    return grad
