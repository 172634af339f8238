"""Ground-truth quantile functions (inverse CDFs).

Every distribution we approximate is represented by its quantile function
F^-1 : [0, 1] -> R, queried pointwise.  Evaluation clamps the fraction to
[TAIL_EPS, 1 - TAIL_EPS] so that kinds with unbounded support stay finite at
the endpoints; bounded kinds are unaffected at that scale.  All kinds are
non-decreasing in the fraction by construction.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from statistics import NormalDist

import numpy as np

TAIL_EPS = 1e-6

_STANDARD_NORMAL = NormalDist()


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


class QuantileFunction:
    """Base class: a monotone map from fractions in [0, 1] to values."""

    def evaluate(self, p: float) -> float:
        """F^-1 at fraction ``p``; raises if ``p`` is outside [0, 1]."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"fraction {p!r} outside [0, 1]")
        if p < TAIL_EPS:
            p = TAIL_EPS
        elif p > 1.0 - TAIL_EPS:
            p = 1.0 - TAIL_EPS
        return self._quantile(p)

    def _quantile(self, p: float) -> float:
        raise NotImplementedError


class UniformQF(QuantileFunction):
    def __init__(self, low: float = 0.0, high: float = 1.0):
        _require_finite("uniform bounds", low, high)
        if high < low:
            raise ValueError("uniform requires low <= high")
        self.low = float(low)
        self.high = float(high)

    def _quantile(self, p: float) -> float:
        return self.low + (self.high - self.low) * p

    def __repr__(self):
        return f"UniformQF({self.low}, {self.high})"


class GaussianQF(QuantileFunction):
    def __init__(self, mean: float = 0.0, stddev: float = 1.0):
        _require_finite("gaussian parameters", mean, stddev)
        if stddev <= 0.0:
            raise ValueError("gaussian requires stddev > 0")
        self.mean = float(mean)
        self.stddev = float(stddev)

    def _quantile(self, p: float) -> float:
        return self.mean + self.stddev * _STANDARD_NORMAL.inv_cdf(p)

    def __repr__(self):
        return f"GaussianQF({self.mean}, {self.stddev})"


class ExponentialQF(QuantileFunction):
    def __init__(self, rate: float = 1.0):
        _require_finite("exponential rate", rate)
        if rate <= 0.0:
            raise ValueError("exponential requires rate > 0")
        self.rate = float(rate)

    def _quantile(self, p: float) -> float:
        return -math.log1p(-p) / self.rate

    def __repr__(self):
        return f"ExponentialQF({self.rate})"


class TwoPointQF(QuantileFunction):
    """Mass ``low_prob`` at ``low_value``, the rest at ``high_value``."""

    def __init__(self, low_value: float, low_prob: float, high_value: float):
        _require_finite("two-point parameters", low_value, low_prob, high_value)
        if not 0.0 < low_prob < 1.0:
            raise ValueError("two-point requires low_prob in (0, 1)")
        if high_value < low_value:
            raise ValueError("two-point requires low_value <= high_value")
        self.low_value = float(low_value)
        self.low_prob = float(low_prob)
        self.high_value = float(high_value)

    def _quantile(self, p: float) -> float:
        return self.low_value if p <= self.low_prob else self.high_value

    def __repr__(self):
        return f"TwoPointQF({self.low_value}, {self.low_prob}, {self.high_value})"


class EmpiricalQF(QuantileFunction):
    """Quantile function of a sample, linearly interpolated.

    Order statistics are placed at the plotting positions k / (n - 1); a
    single-sample input degenerates to a constant.
    """

    def __init__(self, samples):
        values = np.asarray(samples, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("empirical requires a non-empty 1-d sample")
        if not np.all(np.isfinite(values)):
            raise ValueError("empirical samples must be finite")
        self.values = np.sort(values)

    def _quantile(self, p: float) -> float:
        n = self.values.size
        if n == 1:
            return float(self.values[0])
        t = p * (n - 1)
        k = int(t)
        if k >= n - 1:
            return float(self.values[-1])
        frac = t - k
        return float(self.values[k] + (self.values[k + 1] - self.values[k]) * frac)

    def __repr__(self):
        return f"EmpiricalQF(<{self.values.size} samples>)"


class TabularQF(QuantileFunction):
    """Explicit fraction -> value table, linearly interpolated.

    The table must start at fraction 0, end at fraction 1, have strictly
    increasing fractions and non-decreasing values.
    """

    def __init__(self, fractions, values):
        fr = np.asarray(fractions, dtype=float)
        va = np.asarray(values, dtype=float)
        if fr.shape != va.shape or fr.ndim != 1 or fr.size < 2:
            raise ValueError("tabular requires matching 1-d arrays of length >= 2")
        if not (np.all(np.isfinite(fr)) and np.all(np.isfinite(va))):
            raise ValueError("tabular entries must be finite")
        if fr[0] != 0.0 or fr[-1] != 1.0:
            raise ValueError("tabular fractions must span [0, 1]")
        if np.any(np.diff(fr) <= 0.0):
            raise ValueError("tabular fractions must be strictly increasing")
        if np.any(np.diff(va) < 0.0):
            raise ValueError("tabular values must be non-decreasing")
        self.fractions = fr
        self.table_values = va
        self._knots = fr.tolist()

    def _quantile(self, p: float) -> float:
        k = bisect_right(self._knots, p) - 1
        if k >= self.fractions.size - 1:
            return float(self.table_values[-1])
        lo, hi = self.fractions[k], self.fractions[k + 1]
        w = (p - lo) / (hi - lo)
        return float(self.table_values[k] + (self.table_values[k + 1] - self.table_values[k]) * w)

    def __repr__(self):
        return f"TabularQF(<{self.fractions.size} knots>)"


_KINDS = {
    "uniform": (UniformQF, ("low", "high")),
    "gaussian": (GaussianQF, ("mean", "stddev")),
    "exponential": (ExponentialQF, ("rate",)),
    "two_point": (TwoPointQF, ("low_value", "low_prob", "high_value")),
    "empirical": (EmpiricalQF, ("samples",)),
    "tabular": (TabularQF, ("fractions", "values")),
}

# Fixed benchmark suite.  The three-point mixture is written as a tabular
# curve with very steep ramps so it stays a valid (finite-slope) table; the
# gaussian and exponential entries rely on the tail clamp for truncation.
_NAMED = {
    "uniform": lambda: UniformQF(0.0, 1.0),
    "gaussian": lambda: GaussianQF(0.0, 1.0),
    "exponential": lambda: ExponentialQF(1.0),
    "two_point": lambda: TwoPointQF(0.0, 0.35, 2.0),
    "three_point": lambda: TabularQF(
        (0.0, 0.199, 0.201, 0.699, 0.701, 1.0),
        (-1.0, -1.0, 0.5, 0.5, 2.5, 2.5),
    ),
}


def named_distribution(name: str) -> QuantileFunction:
    """One of the fixed benchmark targets, by name."""
    try:
        return _NAMED[name]()
    except KeyError:
        known = ", ".join(sorted(_NAMED))
        raise ValueError(f"unknown distribution name {name!r}; known names: {known}") from None


def build_quantile_function(spec) -> QuantileFunction:
    """Build a quantile function from a name or a {'kind': ..., params} dict."""
    if isinstance(spec, str):
        return named_distribution(spec)
    if isinstance(spec, QuantileFunction):
        return spec
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("distribution spec must be a name or a dict with a 'kind' key")
    kind = spec["kind"]
    if kind not in _KINDS:
        known = ", ".join(sorted(_KINDS))
        raise ValueError(f"unknown distribution kind {kind!r}; known kinds: {known}")
    cls, fields = _KINDS[kind]
    params = {k: v for k, v in spec.items() if k != "kind"}
    unknown = set(params) - set(fields)
    if unknown:
        raise ValueError(f"unknown parameters for {kind}: {sorted(unknown)}")
    return cls(**params)
