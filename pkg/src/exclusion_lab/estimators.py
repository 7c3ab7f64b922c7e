"""Observables estimated from replica traces.

Four routes to the diffusivity are provided and tagged:

``definition``
    second moment of the two-point function around the characteristic
    position (1 - 2 rho) b t;
``green_kubo``
    sigma^2 plus the normalized variance of the time-integrated total flux;
``second_class``
    displacement variance of a second-class particle;
``height``
    TASEP only, window sum of height-function variances.

Per-replica quantities are computed by the ``*_rows`` helpers so that the
batch reducer used for large runs and the trace-level functions below share
one implementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    GridMissError,
    MissingAccumulatorError,
    NotTASEPError,
    WindowTooWideError,
    WrapDominatedError,
)
from .law import JumpLaw
from .process import light_cone_halfwidth, minimum_ring
from .trace import ReplicaTrace

ESTIMATOR_TAGS = ("definition", "green_kubo", "second_class", "height")


@dataclass(frozen=True)
class TimeGrid:
    points: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.points or self.points[0] <= 0:
            raise ValueError("time grid must start at a positive time")
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ValueError("time grid must be strictly increasing")

    @classmethod
    def geometric(cls, t0: float, ratio: float, t_max: float) -> "TimeGrid":
        """Points t_max * ratio**-j down to the first one not below t0.

        Anchoring at t_max puts t_max, t_max/2, ... (for ratio 2**0.5) on the
        grid; the smallest point is ratio-spaced and lies in [t0, t0*ratio).
        """
        if t0 <= 0 or ratio <= 1 or t_max < t0:
            raise ValueError("need 0 < t0 <= t_max and ratio > 1")
        K = int(math.floor(math.log(t_max / t0) / math.log(ratio) + 1e-9)) + 1
        first = t_max / ratio ** (K - 1)
        pts = [first * ratio**k for k in range(K)]
        pts[-1] = float(t_max)
        return cls(tuple(float(p) for p in pts))

    @property
    def ratio(self) -> float:
        if len(self.points) < 2:
            return float("nan")
        return self.points[1] / self.points[0]

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points)


def centered_sites(L: int) -> np.ndarray:
    """Representatives of site offsets 0..L-1 in (-L/2, L/2]."""
    x = np.arange(L)
    return np.where(x > L // 2, x - L, x)


def characteristic_shift(law: JumpLaw, rho: float, t: float) -> float:
    return (1.0 - 2.0 * rho) * law.drift * t


def kpz_rate(law: JumpLaw, rho: float) -> float:
    """Gamma in the fluctuation width (Gamma t)^{2/3}: 2 sqrt(2) |b| sqrt(chi)."""
    chi = rho * (1.0 - rho)
    return 2.0 * math.sqrt(2.0) * abs(law.drift) * math.sqrt(chi)


def fluctuation_window(law: JumpLaw, rho: float, t: float, L: int | None = None, *, scale: float = 1.0) -> int:
    """Half-width of the summation window around (1 - 2 rho) b t.

    max(5 sqrt(sigma^2 t), 3.5 (Gamma t)^{2/3}) + 2R, i.e. about five
    standard deviations of either the diffusive or the KPZ profile, capped by
    the single-walker light cone and by the ring.
    """
    width = max(5.0 * math.sqrt(law.second_moment * t), 3.5 * (kpz_rate(law, rho) * t) ** (2.0 / 3.0))
    w = scale * width + 2 * law.range
    w = min(w, scale * light_cone_halfwidth(law, t) + 2 * law.range)
    w = int(math.ceil(w))
    if L is not None:
        w = min(w, L // 2 - 1)
    return w


def check_light_cone(L: int, law: JumpLaw, t: float) -> None:
    need = minimum_ring(law, t)
    if L < need:
        raise WrapDominatedError(f"ring of {L} sites is below the light-cone requirement {need} at t={t}")


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    mean = float(values.mean())
    if n < 2:
        return mean, float("inf")
    return mean, float(values.std(ddof=1) / math.sqrt(n))


# ----------------------------------------------------------------------------
# per-replica primitives


def two_point_rows(occ0: np.ndarray, occt: np.ndarray, rho: float) -> np.ndarray:
    """Per-replica S_r(x) = L^-1 sum_y (eta_{y+x}(t) - rho)(eta_y(0) - rho).

    Inputs are (n, L) occupancy arrays; column x of the result is the site
    offset x (not centered). Integer arithmetic keeps the per-replica sum
    rule exact: with a = eta(0), b = eta(t),
    sum_y (b_{y+x} - rho)(a_y - rho) = C(x) - rho (N + N) + rho^2 L where
    C(x) = sum_y a_y b_{y+x} is an integer.
    """
    a = np.atleast_2d(occ0)
    b = np.atleast_2d(occt)
    n, L = a.shape
    fa = np.fft.rfft(a.astype(np.float64), axis=1)
    fb = np.fft.rfft(b.astype(np.float64), axis=1)
    cross = np.rint(np.fft.irfft(np.conj(fa) * fb, n=L, axis=1))
    na = a.sum(axis=1, dtype=np.int64)[:, None]
    nb = b.sum(axis=1, dtype=np.int64)[:, None]
    return (cross - rho * (na + nb) + rho * rho * L) / L


def sum_rule_defect(rows: np.ndarray, n_particles: np.ndarray, rho: float) -> np.ndarray:
    """sum_x S_r(x) - (N - rho L)^2 / L for each replica (exactly zero in exact arithmetic)."""
    L = rows.shape[1]
    n = np.asarray(n_particles, dtype=np.float64)
    return rows.sum(axis=1) - (n - rho * L) ** 2 / L


def diffusivity_weights(L: int, t: float, law: JumpLaw, rho: float, window: int | None = None) -> np.ndarray:
    """omega_x = (x - shift)^2 / (chi t) on the window, zero outside."""
    chi = rho * (1.0 - rho)
    x = centered_sites(L).astype(np.float64)
    shift = characteristic_shift(law, rho, t)
    w = (x - shift) ** 2 / (chi * t)
    if window is not None:
        w = np.where(np.abs(x - shift) <= window, w, 0.0)
    return w


def definition_rows(
    rows_t: np.ndarray, rows_0: np.ndarray | None, weights: np.ndarray, chi: float
) -> np.ndarray:
    """Per-replica plug-in diffusivity, optionally with the time-zero control variate.

    The control variate subtracts S_r(x, 0) - chi 1{x=0}, whose expectation is
    exactly zero under the product measure; the estimator stays unbiased and
    the shared global density fluctuation cancels.
    """
    vals = rows_t @ weights
    if rows_0 is not None:
        vals = vals - rows_0 @ weights + chi * weights[0]
    return vals


def green_kubo_rows(j_t: np.ndarray, t: float, law: JumpLaw, rho: float, L: int) -> np.ndarray:
    chi = rho * (1.0 - rho)
    return law.second_moment + chi * np.asarray(j_t, dtype=np.float64) ** 2 / (t * L)


def second_class_rows(x_t: np.ndarray, t: float, law: JumpLaw, rho: float) -> np.ndarray:
    return (np.asarray(x_t, dtype=np.float64) - characteristic_shift(law, rho, t)) ** 2 / t


def height_window_sites(law: JumpLaw, rho: float, t: float, window: int) -> np.ndarray:
    c = int(round(characteristic_shift(law, rho, t)))
    return np.arange(c - window, c + window + 1)


def height_profiles(
    occ0: np.ndarray, occt: np.ndarray, bond01: np.ndarray, sites: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """h_t(x) and h_0(x) for the requested sites x (centered integers).

    h_t(x) = 2 J_{0,1}(t) + sum_{y=1}^{x} (1 - 2 eta_y(t)) for x > 0, the
    mirrored sum -sum_{y=x+1}^{0} (1 - 2 eta_y(t)) for x < 0, and 2 J_{0,1}(t)
    at x = 0, where J_{0,1} is the net rightward crossing count of bond (0,1).
    """
    occ0 = np.atleast_2d(occ0)
    occt = np.atleast_2d(occt)
    L = occt.shape[1]

    def profile(occ: np.ndarray) -> np.ndarray:
        s = 1 - 2 * occ.astype(np.int64)
        out = np.zeros((occ.shape[0], sites.size), dtype=np.int64)
        pos = sites > 0
        neg = sites < 0
        if pos.any():
            xmax = int(sites[pos].max())
            idx = np.arange(1, xmax + 1) % L
            cum = np.cumsum(s[:, idx], axis=1)
            out[:, pos] = cum[:, sites[pos] - 1]
        if neg.any():
            xmin = int(sites[neg].min())
            idx = np.arange(0, xmin, -1) % L  # sites 0, -1, ..., xmin+1
            cum = np.cumsum(s[:, idx], axis=1)
            out[:, neg] = -cum[:, -sites[neg] - 1]
        return out

    h0 = profile(occ0)
    ht = profile(occt) + 2 * np.asarray(bond01, dtype=np.int64)[:, None]
    return ht, h0


# ----------------------------------------------------------------------------
# trace-level operations


def _stack(traces: Sequence[ReplicaTrace], t: float, attr: str) -> tuple[np.ndarray, int]:
    if not traces:
        raise ValueError("no traces given")
    k = traces[0].index_of(t)
    if k is None:
        raise GridMissError(f"t={t} was not recorded")
    data = [getattr(tr, attr) for tr in traces]
    if any(d is None for d in data):
        raise MissingAccumulatorError(f"traces do not carry {attr}")
    return np.stack([d[k] for d in data]), k


@dataclass
class TwoPointEstimate:
    """Mean two-point function over replicas, indexed by site offset 0..L-1."""

    t: float
    s_values: np.ndarray
    stderr: np.ndarray
    replicas: int
    rows: np.ndarray | None = field(default=None, repr=False)
    n_particles: np.ndarray | None = field(default=None, repr=False)

    @property
    def L(self) -> int:
        return self.s_values.size

    def centered(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(x, S, stderr) ordered by centered x."""
        x = centered_sites(self.L)
        order = np.argsort(x)
        return x[order], self.s_values[order], self.stderr[order]


def two_point_from_rows(t: float, rows: np.ndarray, n_particles: np.ndarray | None = None) -> TwoPointEstimate:
    n = rows.shape[0]
    mean = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(rows.shape[1], np.inf)
    return TwoPointEstimate(t=float(t), s_values=mean, stderr=se, replicas=n, rows=rows, n_particles=n_particles)


def estimate_two_point(traces: Sequence[ReplicaTrace], t: float, rho: float) -> TwoPointEstimate:
    occt, k = _stack(traces, t, "occupancy")
    occ0 = np.stack([tr.occupancy[0] for tr in traces])
    rows = two_point_rows(occ0, occt, rho)
    n_part = np.array([tr.n_particles for tr in traces])
    return two_point_from_rows(t, rows, n_part)


def diffusivity_from_two_point(
    s: TwoPointEstimate,
    law: JumpLaw,
    rho: float,
    *,
    baseline: TwoPointEstimate | None = None,
    window: int | str | None = "auto",
    check_wrap: bool = True,
) -> tuple[float, float]:
    """Plug-in D(t) from a two-point estimate.

    ``window="auto"`` sums over :func:`fluctuation_window`; ``None`` uses
    the whole ring. With per-replica rows available the standard error is
    the exact across-replica one for this linear functional; otherwise
    sites are treated as independent. ``baseline`` (the t = 0 estimate from
    the same replicas) switches on the time-zero control variate.
    """
    if s.t <= 0:
        raise ValueError("diffusivity needs t > 0")
    L = s.L
    if check_wrap:
        check_light_cone(L, law, s.t)
    if window == "auto":
        window = fluctuation_window(law, rho, s.t, L)
    chi = rho * (1.0 - rho)
    w = diffusivity_weights(L, s.t, law, rho, window)
    if s.rows is not None:
        rows0 = baseline.rows if baseline is not None else None
        if rows0 is not None and rows0.shape != s.rows.shape:
            raise ValueError("baseline rows do not match")
        return _mean_se(definition_rows(s.rows, rows0, w, chi))
    value = float(w @ s.s_values)
    var = float((w**2) @ (s.stderr**2))
    if baseline is not None:
        value += -float(w @ baseline.s_values) + chi * w[0]
        var += float((w**2) @ (baseline.stderr**2))
    return value, math.sqrt(var)


@dataclass(frozen=True)
class SumRuleResiduals:
    zeroth: float
    zeroth_stderr: float
    first: float
    first_stderr: float
    max_identity_defect: float | None = None


def sum_rule_residuals(s: TwoPointEstimate, law: JumpLaw, rho: float) -> SumRuleResiduals:
    """sum_x S - chi, and (1/chi) sum_x x S - (1 - 2 rho) b t, with standard errors."""
    chi = rho * (1.0 - rho)
    x = centered_sites(s.L).astype(np.float64)
    target = characteristic_shift(law, rho, s.t)
    defect = None
    if s.rows is not None:
        z0, z0se = _mean_se(s.rows.sum(axis=1) - chi)
        f1, f1se = _mean_se(s.rows @ x / chi - target)
        if s.n_particles is not None:
            defect = float(np.max(np.abs(sum_rule_defect(s.rows, s.n_particles, rho))))
    else:
        z0 = float(s.s_values.sum() - chi)
        z0se = float(math.sqrt((s.stderr**2).sum()))
        f1 = float(x @ s.s_values / chi - target)
        f1se = float(math.sqrt(((x / chi) ** 2) @ (s.stderr**2)))
    return SumRuleResiduals(z0, z0se, f1, f1se, defect)


def green_kubo_diffusivity(
    traces: Sequence[ReplicaTrace], t: float, law: JumpLaw, rho: float, L: int
) -> tuple[float, float]:
    """sigma^2 + chi/(t L) * mean J(t)^2, with J the integrated total flux."""
    if t <= 0:
        return law.second_moment, 0.0
    j, _ = _stack(traces, t, "j_integral")
    return _mean_se(green_kubo_rows(j, t, law, rho, L))


@dataclass
class SecondClassStatistics:
    d_value: float
    stderr: float
    mean_displacement: float
    mean_stderr: float
    sites: np.ndarray  # centered positions
    probabilities: np.ndarray
    replicas: int


def second_class_histogram(x_wrapped: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(np.asarray(x_wrapped) % L, minlength=L)
    x = centered_sites(L)
    order = np.argsort(x)
    return x[order], counts[order]


def second_class_statistics(
    traces: Sequence[ReplicaTrace], t: float, law: JumpLaw, rho: float
) -> SecondClassStatistics:
    xu, k = _stack(traces, t, "x_unwrapped")
    n = xu.size
    d, dse = _mean_se(second_class_rows(xu, t, law, rho)) if t > 0 else (0.0, 0.0)
    m, mse = _mean_se(xu.astype(np.float64))
    L = traces[0].occupancy.shape[1] if traces[0].occupancy is not None else None
    if traces[0].x_wrapped is not None and L is None:
        L = int(max(tr.x_wrapped.max() for tr in traces)) + 1
    xw = np.stack([tr.x_wrapped[k] for tr in traces]) if traces[0].x_wrapped is not None else xu
    if L is None:
        raise MissingAccumulatorError("ring size unknown for the second-class histogram")
    sites, counts = second_class_histogram(xw, L)
    return SecondClassStatistics(d, dse, m, mse, sites, counts / n, n)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True)
class IdentityCheck:
    tv: float
    tv_corrected: float  # tv minus its mean under the parametric null
    bootstrap_se: float  # spread of tv under the null

    @property
    def passes(self) -> bool:
        return self.tv_corrected <= 4.0 * self.bootstrap_se


def identity_check(
    counts: np.ndarray,
    s_mean: np.ndarray,
    s_stderr: np.ndarray,
    rho: float,
    *,
    resamples: int = 200,
    seed: int = 0,
) -> IdentityCheck:
    """Compare the law of X_t with S(., t)/chi by total variation.

    ``counts`` is the histogram of X_t over site offsets 0..L-1 and
    ``s_mean``/``s_stderr`` the two-point estimate at the same time. Both
    sides are noisy, so TV is positive even when the laws agree. The null
    distribution of TV is simulated by drawing a multinomial histogram and a
    Gaussian-perturbed two-point vector around a common law (the average of
    the two normalized estimates); the excess of the observed TV over the
    null mean is reported in units of the null spread.
    """
    chi = rho * (1.0 - rho)
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    p = counts / n
    q = np.asarray(s_mean) / chi
    q_se = np.asarray(s_stderr) / chi
    tv = total_variation(p, q)
    if not np.all(np.isfinite(q_se)):
        return IdentityCheck(tv=tv, tv_corrected=float("nan"), bootstrap_se=float("nan"))
    qp = np.clip(q, 0.0, None)
    common = 0.5 * (p + qp / qp.sum())
    rng = np.random.default_rng(seed)
    boots = np.empty(resamples)
    for i in range(resamples):
        pb = rng.multinomial(n, common) / n
        qb = common + q_se * rng.standard_normal(q.size)
        boots[i] = total_variation(pb, qb)
    return IdentityCheck(tv=tv, tv_corrected=tv - float(boots.mean()), bootstrap_se=float(boots.std(ddof=1)))


def second_class_identity(
    x_wrapped: np.ndarray,
    two_point_rows_t: np.ndarray,
    rho: float,
    *,
    resamples: int = 200,
    seed: int = 0,
) -> IdentityCheck:
    """:func:`identity_check` from raw second-class positions and per-replica two-point rows."""
    L = two_point_rows_t.shape[1]
    counts = np.bincount(np.asarray(x_wrapped) % L, minlength=L)
    est = two_point_from_rows(0.0, two_point_rows_t)
    return identity_check(counts, est.s_values, est.stderr, rho, resamples=resamples, seed=seed)


def height_rows(
    occ0: np.ndarray, occt: np.ndarray, bond01: np.ndarray, sites: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-site sample variances of h_t and h_0 plus per-replica statistics.

    Returns ``(var_t - var_0, q)`` where ``q_r`` is the replica's
    contribution sum_x [(h_t - mean h_t)^2 - (h_0 - mean h_0)^2], used for the
    standard error.
    """
    ht, h0 = height_profiles(occ0, occt, bond01, sites)
    n = ht.shape[0]
    dt = ht - ht.mean(axis=0)
    d0 = h0 - h0.mean(axis=0)
    var_diff = ((dt**2).sum(axis=0) - (d0**2).sum(axis=0)) / (n - 1)
    q = (dt**2 - d0**2).sum(axis=1)
    return var_diff, q


@dataclass
class HeightVarianceResult:
    value: float
    stderr: float
    sites: np.ndarray
    summand: np.ndarray  # Var h_t(x) - 4 chi |x - (1-2 rho) t|
    var_h: np.ndarray


def height_correction(sites: np.ndarray, rho: float, t: float) -> np.ndarray:
    """4 chi (|x| - |x - (1 - 2 rho) t|): turns Var h_t - Var h_0 into the summand."""
    chi = rho * (1.0 - rho)
    return 4.0 * chi * (np.abs(sites) - np.abs(sites - (1.0 - 2.0 * rho) * t))


def height_variance_diffusivity(
    traces: Sequence[ReplicaTrace],
    t: float,
    rho: float,
    window: int | None = None,
    law: JumpLaw | None = None,
) -> HeightVarianceResult:
    """TASEP diffusivity from height-function variances.

    D_h = (4 chi t)^-1 sum_x [Var h_t(x) - 4 chi |x - (1 - 2 rho) t|]. The
    sample variance of h_0(x), whose expectation is exactly 4 chi |x|, is
    used as a control variate for Var h_t(x).
    """
    if law is not None and not law.is_tasep:
        raise NotTASEPError("height-function route is defined for p(1) = 1 only")
    occt, k = _stack(traces, t, "occupancy")
    bonds, _ = _stack(traces, t, "bond_counts")
    L = occt.shape[1]
    chi = rho * (1.0 - rho)
    from .law import tasep

    tl = tasep()
    if window is None:
        window = fluctuation_window(tl, rho, t, L)
    sites = height_window_sites(tl, rho, t, window)
    if sites.max() - sites.min() + 1 > L - 2:
        raise WindowTooWideError(f"height window of {sites.size} sites does not fit on L={L}")
    occ0 = np.stack([tr.occupancy[0] for tr in traces])
    var_diff, q = height_rows(occ0, occt, bonds[:, 0], sites)
    corr = height_correction(sites, rho, t)
    summand = var_diff + corr
    n = q.size
    value = float(summand.sum() / (4 * chi * t))
    se = float(q.std(ddof=1) / math.sqrt(n) / (4 * chi * t))
    _, h0 = height_profiles(occ0, occt, bonds[:, 0], sites)
    var_h = var_diff + h0.var(axis=0, ddof=1)
    return HeightVarianceResult(value, se, sites, summand, var_h)


@dataclass
class DiffusivityCurve:
    grid: TimeGrid
    d_values: np.ndarray
    stderr: np.ndarray
    estimator_tag: str
    batch_values: np.ndarray | None = field(default=None, repr=False)  # (batches, K)

    def __post_init__(self) -> None:
        self.d_values = np.asarray(self.d_values, dtype=np.float64)
        self.stderr = np.asarray(self.stderr, dtype=np.float64)
        if self.estimator_tag not in ESTIMATOR_TAGS and not self.estimator_tag.startswith("synthetic"):
            raise ValueError(f"unknown estimator tag {self.estimator_tag!r}")
        if self.d_values.shape != (len(self.grid),) or self.stderr.shape != (len(self.grid),):
            raise ValueError("curve arrays must match the grid length")

    @property
    def t(self) -> np.ndarray:
        return self.grid.as_array()

    def restrict(self, t_min: float, t_max: float) -> "DiffusivityCurve":
        t = self.t
        m = (t >= t_min * (1 - 1e-12)) & (t <= t_max * (1 + 1e-12))
        bv = None if self.batch_values is None else self.batch_values[:, m]
        return DiffusivityCurve(TimeGrid(tuple(t[m])), self.d_values[m], self.stderr[m], self.estimator_tag, bv)

    def scaled(self, c: float) -> "DiffusivityCurve":
        bv = None if self.batch_values is None else c * self.batch_values
        return DiffusivityCurve(self.grid, c * self.d_values, abs(c) * self.stderr, self.estimator_tag, bv)


def synthetic_curve(grid: TimeGrid, fn, rel_err: float = 0.01, tag: str = "synthetic") -> DiffusivityCurve:
    t = grid.as_array()
    d = np.asarray(fn(t), dtype=np.float64) * np.ones_like(t)
    return DiffusivityCurve(grid, d, rel_err * np.abs(d), tag)
