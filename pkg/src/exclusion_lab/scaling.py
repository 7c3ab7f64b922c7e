"""Exponent fits, Laplace profiles and collapse diagnostics for D(t) curves.

Uncertainties of nonlinear summaries (Laplace slopes, H_{-1} exponents)
come from a delete-one-batch jackknife whenever the curve carries
batch-mean values; otherwise the per-point standard errors are propagated
as if independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .errors import (
    InsufficientOverlapError,
    InsufficientPointsError,
    LambdaOutOfRangeError,
    NegativeNormError,
    NonPositiveValuesError,
    TailDominatedError,
)
from .estimators import DiffusivityCurve, TimeGrid, TwoPointEstimate, characteristic_shift
from .law import JumpLaw

TAIL_CAP = 0.01
Z95 = 1.959963984540054


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    amplitude: float
    window: tuple[float, float]
    exponent_ci: tuple[float, float]
    residual_rms: float
    exponent_stderr: float
    n_points: int

    def excludes(self, value: float, n_sigma: float) -> bool:
        return abs(self.exponent - value) > n_sigma * self.exponent_stderr


def _wls_line(x: np.ndarray, y: np.ndarray, sigma: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted least squares y = c0 + c1 x; returns coefficients and covariance."""
    A = np.column_stack([np.ones_like(x), x])
    if sigma is None:
        w = np.ones_like(x)
    else:
        w = 1.0 / sigma**2
    AtW = A.T * w
    cov = np.linalg.inv(AtW @ A)
    coef = cov @ (AtW @ y)
    if sigma is None:
        dof = max(x.size - 2, 1)
        resid = y - A @ coef
        cov = cov * float(resid @ resid) / dof
    return coef, cov


def fit_power_law(
    curve: DiffusivityCurve, window: tuple[float, float] | None = None, *, min_points: int = 5
) -> PowerLawFit:
    """Fit D(t) = A t^alpha by weighted least squares on log D versus log t.

    The default window is the last decade of the curve. Weights are
    (D / stderr)^2; the exponent confidence interval is 1.96 standard
    deviations from the (unscaled) parameter covariance.
    """
    t_all = curve.t
    if window is None:
        window = (t_all[-1] / 10.0, t_all[-1])
    inside = (t_all >= window[0] * (1 - 1e-12)) & (t_all <= window[1] * (1 + 1e-12))
    if inside.sum() < min_points:
        raise InsufficientPointsError(f"{int(inside.sum())} points in window {window}, need {min_points}")
    sub = curve.restrict(*window)
    t, d, se = sub.t, sub.d_values, sub.stderr
    if t.size < min_points:
        raise InsufficientPointsError(f"{t.size} points in window {window}, need {min_points}")
    if np.any(d <= 0):
        raise NonPositiveValuesError("power-law fit needs D > 0 throughout the window")
    if np.any(~np.isfinite(se)) or np.any(se < 0):
        raise ValueError("standard errors must be finite and non-negative")
    x = np.log(t)
    y = np.log(d)
    sigma = None if np.all(se == 0) else np.maximum(se / d, 1e-300)
    coef, cov = _wls_line(x, y, sigma)
    alpha = float(coef[1])
    a_se = float(math.sqrt(max(cov[1, 1], 0.0)))
    resid = y - (coef[0] + coef[1] * x)
    return PowerLawFit(
        exponent=alpha,
        amplitude=float(math.exp(coef[0])),
        window=(float(t[0]), float(t[-1])),
        exponent_ci=(alpha - Z95 * a_se, alpha + Z95 * a_se),
        residual_rms=float(math.sqrt(np.mean(resid**2))),
        exponent_stderr=a_se,
        n_points=int(t.size),
    )


def fit_power_law_halves(curve: DiffusivityCurve, window: tuple[float, float] | None = None) -> list[PowerLawFit]:
    """Window-sensitivity report: the fit repeated on each half (in log t) of the window."""
    t = curve.t
    if window is None:
        window = (t[-1] / 10.0, t[-1])
    mid = math.sqrt(window[0] * window[1])
    out = []
    for w in ((window[0], mid), (mid, window[1])):
        try:
            out.append(fit_power_law(curve, w, min_points=3))
        except InsufficientPointsError:
            pass
    return out


# ----------------------------------------------------------------------------
# Laplace transform of t D(t)


@dataclass
class LaplaceProfile:
    lambdas: np.ndarray
    values: np.ndarray
    tail_fraction: np.ndarray
    stderr: np.ndarray | None = None
    jackknife: np.ndarray | None = field(default=None, repr=False)  # (G, n_lambda)

    def __post_init__(self) -> None:
        if np.any(self.values <= 0):
            raise NonPositiveValuesError("Laplace profile values must be positive")


def default_lambda_grid(t_max: float, ratio: float = 2**0.5, decades: float = 1.0) -> np.ndarray:
    """Geometric grid from 10/t_max upwards over ``decades`` decades, returned decreasing."""
    lo = 10.0 / t_max
    n = int(math.floor(decades * math.log(10) / math.log(ratio) + 1e-9)) + 1
    return (lo * ratio ** np.arange(n))[::-1]


def _segment_integral(c: float, s: float, a: float, b: float, lam: float) -> float:
    """int_a^b e^{-lam t} t * c t^s dt."""
    p = 2.0 + s
    if p > 0:
        lo = special.gammainc(p, lam * a)
        hi = special.gammainc(p, lam * b)
        # Difference of upper tails is more accurate far out in the tail.
        if lo > 0.5:
            diff = special.gammaincc(p, lam * a) - special.gammaincc(p, lam * b)
        else:
            diff = hi - lo
        return c * special.gamma(p) * lam ** (-p) * diff

    val, _ = integrate.quad(lambda t: math.exp(-lam * t) * c * t ** (1.0 + s), a, b, epsrel=1e-12)
    return val


def _laplace_values(
    t: np.ndarray, d: np.ndarray, lambdas: np.ndarray, short_time: float | None
) -> tuple[np.ndarray, np.ndarray]:
    if np.any(d <= 0):
        raise NonPositiveValuesError("log-log interpolation needs D > 0")
    T = t[-1]
    logt = np.log(t)
    logd = np.log(d)
    slopes = np.diff(logd) / np.diff(logt)
    # tail: power law fitted (unweighted) over the last decade, at least two points
    m = t >= T / 10.0 * (1 - 1e-12)
    if m.sum() < 2:
        m[-2:] = True
    coef = np.polyfit(logt[m], logd[m], 1)
    alpha, amp = float(coef[0]), float(math.exp(coef[1]))
    values = np.empty(lambdas.size)
    tails = np.empty(lambdas.size)
    for i, lam in enumerate(lambdas):
        total = 0.0
        if short_time is None:
            s0 = slopes[0] if slopes.size else 0.0
            total += _segment_integral(d[0] * t[0] ** (-s0), s0, 0.0, t[0], lam) if 2 + s0 > 0 else 0.0
        else:
            total += short_time * special.gammainc(2.0, lam * t[0]) / lam**2
        for k in range(slopes.size):
            c = d[k] * t[k] ** (-slopes[k])
            total += _segment_integral(c, slopes[k], t[k], t[k + 1], lam)
        p = 2.0 + alpha
        if p <= 0:
            raise TailDominatedError("tail exponent makes the Laplace integral diverge")
        tail = amp * special.gamma(p) * lam ** (-p) * special.gammaincc(p, lam * T)
        values[i] = total + tail
        tails[i] = tail / values[i]
    return values, tails


def laplace_transform_tD(
    curve: DiffusivityCurve,
    lambdas: Sequence[float] | None = None,
    *,
    short_time: float | None = None,
    enforce_tail_cap: bool = True,
) -> LaplaceProfile:
    """int_0^inf e^{-lambda t} t D(t) dt for each lambda.

    D is interpolated piecewise linearly in log-log coordinates on the grid
    and each piece is integrated in closed form (incomplete gamma). Below the
    first grid time D is the constant ``short_time`` (sigma^2 for a physical
    curve) or, if None, the continuation of the first segment. Beyond the
    last grid time T the last-decade power-law fit is used; lambdas below
    10/T are rejected and any result whose extrapolated share exceeds 1%
    raises TailDominatedError.
    """
    t = curve.t
    T = t[-1]
    lam = default_lambda_grid(T) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    if np.any(lam * T < 10.0 * (1 - 1e-12)):
        raise LambdaOutOfRangeError(f"lambda must be at least 10/T = {10.0 / T:.4g}")
    values, tails = _laplace_values(t, curve.d_values, lam, short_time)
    if enforce_tail_cap and np.any(tails > TAIL_CAP):
        raise TailDominatedError(f"tail fraction {tails.max():.3g} exceeds {TAIL_CAP}")
    jack = None
    stderr = None
    if curve.batch_values is not None and curve.batch_values.shape[0] >= 2:
        jack = np.stack(
            [_laplace_values(t, d, lam, short_time)[0] for d in _jackknife_curves(curve.batch_values)]
        )
        stderr = _jackknife_se(jack)
    else:
        stderr = _propagated_se(lambda d: _laplace_values(t, d, lam, short_time)[0], curve)
    return LaplaceProfile(lam, values, tails, stderr, jack)


def _jackknife_curves(batch_values: np.ndarray) -> list[np.ndarray]:
    G = batch_values.shape[0]
    total = batch_values.sum(axis=0)
    return [(total - batch_values[g]) / (G - 1) for g in range(G)]


def _jackknife_se(replicates: np.ndarray) -> np.ndarray:
    G = replicates.shape[0]
    mean = replicates.mean(axis=0)
    return np.sqrt((G - 1) / G * ((replicates - mean) ** 2).sum(axis=0))


def _propagated_se(fn: Callable[[np.ndarray], np.ndarray], curve: DiffusivityCurve) -> np.ndarray:
    """First-order error propagation treating grid points as independent."""
    d = curve.d_values
    base = fn(d)
    var = np.zeros_like(base)
    for k in range(d.size):
        if curve.stderr[k] == 0:
            continue
        h = 1e-4 * d[k]
        dp = d.copy()
        dp[k] += h
        grad = (fn(dp) - base) / h
        var += (grad * curve.stderr[k]) ** 2
    return np.sqrt(var)


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    stderr: float
    lambdas: tuple[float, float]


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def laplace_slope(profile: LaplaceProfile) -> SlopeEstimate:
    """Log-log slope of the profile against lambda (ordinary least squares)."""
    lam = profile.lambdas
    s = _loglog_slope(lam, profile.values)
    if profile.jackknife is not None:
        reps = np.array([_loglog_slope(lam, v) for v in profile.jackknife])
        se = float(_jackknife_se(reps[:, None])[0])
    elif profile.stderr is not None:
        # independent-error propagation over lambda points
        x = np.log(lam)
        xc = x - x.mean()
        se = float(math.sqrt(((xc / (xc @ xc)) ** 2) @ ((profile.stderr / profile.values) ** 2)))
    else:
        se = float("nan")
    return SlopeEstimate(s, se, (float(lam.min()), float(lam.max())))


# ----------------------------------------------------------------------------
# H_{-1} profile


@dataclass
class H1Profile:
    lambdas: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None
    negative: np.ndarray
    jackknife: np.ndarray | None = field(default=None, repr=False)


def extract_h1_profile(
    profile: LaplaceProfile, law: JumpLaw, rho: float, *, allow_negative: bool = False
) -> H1Profile:
    """Invert the Laplace-transformed Green-Kubo identity for |||w|||^2_{-1,lambda}.

    |||w|||^2_{-1,lambda} = (lambda^2 LT(lambda) - sigma^2) / (2 chi).
    """
    chi = rho * (1.0 - rho)
    lam = profile.lambdas

    def invert(v: np.ndarray) -> np.ndarray:
        return (lam**2 * v - law.second_moment) / (2.0 * chi)

    vals = invert(profile.values)
    neg = vals < 0
    if neg.any() and not allow_negative:
        raise NegativeNormError(f"negative H_-1 estimate at lambda={lam[neg]}")
    se = None if profile.stderr is None else lam**2 * profile.stderr / (2.0 * chi)
    jack = None if profile.jackknife is None else np.stack([invert(v) for v in profile.jackknife])
    return H1Profile(lam, vals, se, neg, jack)


def h1_exponent(h1: H1Profile) -> SlopeEstimate:
    """Log-log slope of the H_{-1} profile against lambda."""
    if np.any(h1.values <= 0):
        raise NegativeNormError("exponent needs a positive profile")
    lam = h1.lambdas
    s = _loglog_slope(lam, h1.values)
    if h1.jackknife is not None and np.all(h1.jackknife > 0):
        reps = np.array([_loglog_slope(lam, v) for v in h1.jackknife])
        se = float(_jackknife_se(reps[:, None])[0])
    elif h1.stderr is not None:
        x = np.log(lam)
        xc = x - x.mean()
        se = float(math.sqrt(((xc / (xc @ xc)) ** 2) @ ((h1.stderr / h1.values) ** 2)))
    else:
        se = float("nan")
    return SlopeEstimate(s, se, (float(lam.min()), float(lam.max())))


# ----------------------------------------------------------------------------
# comparison of two jump laws


@dataclass(frozen=True)
class LawComparison:
    slope_a: SlopeEstimate
    slope_b: SlopeEstimate
    difference: float
    difference_stderr: float
    lambdas: tuple[float, ...]

    @property
    def difference_ci(self) -> tuple[float, float]:
        return (self.difference - Z95 * self.difference_stderr, self.difference + Z95 * self.difference_stderr)

    def agree(self, tolerance: float) -> bool:
        return abs(self.difference) <= tolerance

    def separated(self, n_sigma: float = 3.0) -> bool:
        return abs(self.difference) > n_sigma * self.difference_stderr


def compare_two_laws(
    curve_a: DiffusivityCurve,
    curve_b: DiffusivityCurve,
    *,
    lambdas: Sequence[float] | None = None,
    short_time_a: float | None = None,
    short_time_b: float | None = None,
) -> LawComparison:
    """Laplace log-log slopes of two curves on a shared lambda grid.

    The two runs are independent, so the slope difference has the
    quadrature sum of the two standard errors. The sandwich between the two
    transforms with unknown constants is checked through slopes only.
    """
    lo = max(curve_a.t[0], curve_b.t[0])
    hi = min(curve_a.t[-1], curve_b.t[-1])
    if hi <= 0 or hi / lo < 10.0 * (1 - 1e-9):
        raise InsufficientOverlapError(f"common time range [{lo}, {hi}] spans less than a decade")
    lam = default_lambda_grid(hi) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    a = laplace_slope(laplace_transform_tD(curve_a, lam, short_time=short_time_a))
    b = laplace_slope(laplace_transform_tD(curve_b, lam, short_time=short_time_b))
    diff = a.slope - b.slope
    se = math.sqrt(np.nan_to_num(a.stderr) ** 2 + np.nan_to_num(b.stderr) ** 2)
    return LawComparison(a, b, diff, se, tuple(float(v) for v in lam))


# ----------------------------------------------------------------------------
# scaling collapse


@dataclass
class CollapseReport:
    exponent: float
    times: tuple[float, ...]
    rescaled: dict[float, tuple[np.ndarray, np.ndarray]]
    discrepancy: dict[tuple[float, float], float]

    def trend(self) -> str:
        """'decreasing', 'plateau' or 'increasing' for consecutive-time discrepancies."""
        ts = self.times
        seq = [self.discrepancy[(a, b)] for a, b in zip(ts, ts[1:])]
        if len(seq) < 2:
            return "plateau"
        if all(b <= a * 1.1 for a, b in zip(seq, seq[1:])):
            return "decreasing" if seq[-1] < seq[0] * 0.9 else "plateau"
        return "increasing"


def rescale_two_point(est: TwoPointEstimate, law: JumpLaw, rho: float, exponent: float = 2.0 / 3.0):
    x, s, _ = est.centered()
    shift = characteristic_shift(law, rho, est.t)
    scale = est.t**exponent
    return (x - shift) / scale, scale * s


def _l1_distance(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray]) -> float:
    ya, fa = a
    yb, fb = b
    lo = max(ya.min(), yb.min())
    hi = min(ya.max(), yb.max())
    if hi <= lo:
        return float("nan")
    grid = np.linspace(lo, hi, 2001)
    diff = np.abs(np.interp(grid, ya, fa) - np.interp(grid, yb, fb))
    return float(integrate.trapezoid(diff, grid))


def scaling_collapse(
    estimates: Sequence[TwoPointEstimate], law: JumpLaw, rho: float, *, exponent: float = 2.0 / 3.0
) -> CollapseReport:
    """Rescale each S(., t) to (y, t^e S) with y = t^-e (x - (1 - 2 rho) b t) and compare pairwise by L1 distance."""
    ests = sorted(estimates, key=lambda e: e.t)
    rescaled = {e.t: rescale_two_point(e, law, rho, exponent) for e in ests}
    disc = {}
    for a, b in combinations(ests, 2):
        disc[(a.t, b.t)] = _l1_distance(rescaled[a.t], rescaled[b.t])
    return CollapseReport(exponent, tuple(e.t for e in ests), rescaled, disc)


def curve_from_function(grid: TimeGrid, fn: Callable[[np.ndarray], np.ndarray], tag: str = "synthetic") -> DiffusivityCurve:
    t = grid.as_array()
    d = np.asarray(fn(t), dtype=np.float64) * np.ones_like(t)
    return DiffusivityCurve(grid, d, np.zeros_like(d), tag)
