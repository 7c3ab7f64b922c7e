"""Brute-force ground truth for the exclusion process on small rings.

Configurations are encoded as integers ``s`` in ``[0, 2**L)`` with
``eta_x = (s >> x) & 1``. Everything here is deterministic linear algebra
over that state space: a sparse generator, its semigroup computed by
uniformization, resolvent solves with a residual certificate, and the
translation-summed inner product on the ring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate, stats

from .errors import (
    DegenerateDensityError,
    InvalidLawError,
    NotMeanZeroError,
    QuadratureFailureError,
    SolveFailedError,
    TooLargeError,
    WrapDominatedError,
)
from .law import JumpLaw

MAX_SITES = 12
UNIFORMIZATION_TOL = 1e-12
RESOLVENT_TOL = 1e-9
MEAN_ZERO_TOL = 1e-10
WRAP_MASS_TOL = 1e-3


@dataclass(frozen=True)
class ResolventSolution:
    lam: float
    u: np.ndarray
    residual: float


@dataclass
class OracleModel:
    L: int
    law: JumpLaw
    rho: float
    generator: sp.csr_matrix
    uniformization_rate: float
    occupancy: np.ndarray  # (dim, L) uint8
    weights: np.ndarray  # product-measure probabilities
    _shifts: np.ndarray = field(repr=False)
    _jump_matrix: sp.csr_matrix = field(repr=False)

    @property
    def dim(self) -> int:
        return 1 << self.L

    @property
    def chi(self) -> float:
        return self.rho * (1.0 - self.rho)

    def shift_index(self, x: int) -> np.ndarray:
        """Index map s -> index of tau_x eta, where (tau_x eta)_y = eta_{y+x}."""
        return self._shifts[x % self.L]

    def expect(self, f: np.ndarray) -> float:
        return float(self.weights @ f)

    def centered_sites(self) -> np.ndarray:
        """Representatives of 0..L-1 in (-L/2, L/2]."""
        x = np.arange(self.L)
        return np.where(x > self.L // 2, x - self.L, x)


def _rotate(states: np.ndarray, x: int, L: int) -> np.ndarray:
    if x == 0:
        return states.copy()
    mask = (1 << L) - 1
    return ((states >> x) | (states << (L - x))) & mask


def build_oracle(law: JumpLaw, L: int, rho: float) -> OracleModel:
    """Explicit generator of the exclusion process on the ring Z/LZ."""
    if not isinstance(law, JumpLaw):
        raise InvalidLawError("law must be a JumpLaw")
    if L > MAX_SITES:
        raise TooLargeError(f"L={L} exceeds the oracle cap of {MAX_SITES} sites")
    if L < 2:
        raise TooLargeError("oracle needs at least 2 sites")
    if law.range >= L:
        raise InvalidLawError(f"law range {law.range} does not fit on a ring of {L} sites")
    if not 0.0 < rho < 1.0:
        raise DegenerateDensityError(f"rho={rho} must lie strictly inside (0, 1)")

    dim = 1 << L
    states = np.arange(dim, dtype=np.int64)
    occ = ((states[:, None] >> np.arange(L)) & 1).astype(np.uint8)

    rows, cols, vals = [], [], []
    for z, p in zip(law.offsets, law.probs):
        for x in range(L):
            y = (x + z) % L
            ok = (occ[:, x] == 1) & (occ[:, y] == 0)
            src = states[ok]
            rows.append(src)
            cols.append(src ^ (1 << x) ^ (1 << y))
            vals.append(np.full(src.size, p))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    jumps = sp.csr_matrix((v, (r, c)), shape=(dim, dim))
    jumps.sum_duplicates()
    exit_rate = np.asarray(jumps.sum(axis=1)).ravel()
    Q = (jumps - sp.diags(exit_rate)).tocsr()

    n = occ.sum(axis=1)
    weights = rho**n * (1.0 - rho) ** (L - n)
    shifts = np.stack([_rotate(states, x, L) for x in range(L)])
    rate = float(exit_rate.max()) if exit_rate.size else 0.0
    return OracleModel(
        L=L,
        law=law,
        rho=rho,
        generator=Q,
        uniformization_rate=max(rate, 1e-300),
        occupancy=occ,
        weights=weights,
        _shifts=shifts,
        _jump_matrix=jumps,
    )


def _poisson_terms(mean: float, tol: float = UNIFORMIZATION_TOL) -> tuple[np.ndarray, int]:
    """Poisson(mean) weights up to the point where the remaining tail is below tol."""
    if mean == 0.0:
        return np.array([1.0]), 1
    kmax = int(stats.poisson.isf(tol, mean)) + 2
    kmax = max(kmax, 1)
    w = stats.poisson.pmf(np.arange(kmax + 1), mean)
    return w, kmax + 1


def stochastic_matrix(model: OracleModel) -> sp.csr_matrix:
    lam = model.uniformization_rate
    return (sp.identity(model.dim, format="csr") + model.generator / lam).tocsr()


def semigroup_apply(
    model: OracleModel, v: np.ndarray, t: float, *, left: bool = False, tol: float = UNIFORMIZATION_TOL
) -> np.ndarray:
    """Return e^{tQ} v (or v e^{tQ} with ``left=True``) by uniformization.

    The series is truncated once the Poisson tail mass, which bounds the sum
    of all omitted terms in sup norm, drops below ``tol`` relative to |v|.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    if t == 0:
        return v.copy()
    P = stochastic_matrix(model)
    if left:
        P = P.T.tocsr()
    weights, n = _poisson_terms(model.uniformization_rate * t, tol)
    term = v.copy()
    out = weights[0] * term
    for k in range(1, n):
        term = P @ term
        out += weights[k] * term
    return out


def occupation_function(model: OracleModel, x: int) -> np.ndarray:
    return model.occupancy[:, x % model.L].astype(np.float64) - model.rho


def flux_function(model: OracleModel, kind: str = "literal") -> np.ndarray:
    """The local function w_0 on configuration space."""
    d0 = occupation_function(model, 0)
    w = np.zeros(model.dim)
    for z, c in model.law.flux_coefficients(kind).items():
        w += c * occupation_function(model, z) * d0
    return w / model.chi


def total_flux_function(model: OracleModel, kind: str = "literal") -> np.ndarray:
    """sum_x tau_x w_0 over the ring."""
    return translation_sum(model, flux_function(model, kind))


def translation_sum(model: OracleModel, psi: np.ndarray) -> np.ndarray:
    out = np.zeros_like(psi, dtype=np.float64)
    for x in range(model.L):
        out += psi[model.shift_index(x)]
    return out


def exact_inner_product(
    model: OracleModel, phi: np.ndarray, psi: np.ndarray, *, check_mean_zero: bool = True
) -> float:
    """<<phi, psi>> = sum over the L ring shifts of E[phi * tau_x psi]."""
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if check_mean_zero:
        for name, f in (("phi", phi), ("psi", psi)):
            m = model.expect(f)
            scale = max(1.0, float(np.max(np.abs(f))))
            if abs(m) > MEAN_ZERO_TOL * scale:
                raise NotMeanZeroError(f"{name} has mean {m:.3e} under the product measure")
    return model.expect(phi * translation_sum(model, psi))


def resolvent_solve(model: OracleModel, lam: float, f: np.ndarray) -> ResolventSolution:
    """Solve (lam - Q) u = f with an iterative solver and certify the residual."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    A = (lam * sp.identity(model.dim, format="csr") - model.generator).tocsr()
    fnorm = float(np.max(np.abs(f))) or 1.0
    # Jacobi preconditioning: A is a diagonally dominant M-matrix.
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda v: dinv * v)
    u, info = spla.bicgstab(A, f, rtol=1e-13, atol=0.0, M=M, maxiter=20 * model.dim)
    residual = float(np.max(np.abs(A @ u - f))) / fnorm
    if info != 0 or residual > RESOLVENT_TOL:
        u = spla.spsolve(A.tocsc(), f)
        residual = float(np.max(np.abs(A @ u - f))) / fnorm
    if residual > RESOLVENT_TOL:
        raise SolveFailedError(f"resolvent residual {residual:.2e} above {RESOLVENT_TOL:.0e}")
    return ResolventSolution(lam=float(lam), u=u, residual=residual)


def exact_h1_norm(model: OracleModel, lam: float, kind: str = "literal") -> float:
    """Squared H_{-1,lambda} norm of the flux: <<w, (lam - L)^{-1} w>>."""
    w = flux_function(model, kind)
    sol = resolvent_solve(model, lam, w)
    return exact_inner_product(model, w, sol.u)


def exact_two_point(model: OracleModel, t: float) -> np.ndarray:
    """S(x, t) for x = 0..L-1 (site indices, not centered)."""
    F = model.occupancy.astype(np.float64) - model.rho
    evolved = semigroup_apply(model, F, t)
    d0 = F[:, 0]
    return (model.weights * d0) @ evolved


def wrap_mass(model: OracleModel, s: np.ndarray) -> float:
    """Fraction of |S| sitting within one range of the antipode."""
    x = model.centered_sites()
    band = np.abs(x) > model.L / 2 - model.law.range
    return float(np.abs(s[band]).sum() / model.chi)


def exact_diffusivity(model: OracleModel, t: float, *, check_wrap: bool = True) -> float:
    """D(t) = (chi t)^-1 sum_x (x - (1-2 rho) b t)^2 S(x, t) with centered x."""
    if t <= 0:
        raise ValueError("t must be positive")
    s = exact_two_point(model, t)
    if check_wrap:
        m = wrap_mass(model, s)
        if m > WRAP_MASS_TOL:
            raise WrapDominatedError(
                f"{m:.2e} of the two-point mass sits near the antipode at t={t} on L={model.L}"
            )
    v = (1.0 - 2.0 * model.rho) * model.law.drift * t
    x = model.centered_sites()
    return float(((x - v) ** 2 * s).sum() / (model.chi * t))


class CurrentCorrelation:
    """g(u) = <<w, e^{uQ} w>> evaluated from one uniformized power series.

    The coefficients c_k = E[w_0 P^k W] are computed once up to the order
    needed at ``t_max``; any g(u) with u <= t_max is then a Poisson mixture
    of them.
    """

    def __init__(self, model: OracleModel, t_max: float, kind: str = "literal"):
        self.model = model
        self.t_max = float(t_max)
        w0 = flux_function(model, kind)
        W = translation_sum(model, w0)
        _, n = _poisson_terms(model.uniformization_rate * self.t_max)
        P = stochastic_matrix(model)
        c = np.empty(n)
        term = W
        left = model.weights * w0
        c[0] = left @ term
        for k in range(1, n):
            term = P @ term
            c[k] = left @ term
        self.coefficients = c

    def __call__(self, u: float) -> float:
        if u < 0 or u > self.t_max * (1 + 1e-12):
            raise ValueError(f"u={u} outside [0, {self.t_max}]")
        k = np.arange(self.coefficients.size)
        return float(stats.poisson.pmf(k, self.model.uniformization_rate * u) @ self.coefficients)


def exact_integrated_current_norm(
    model: OracleModel, t: float, kind: str = "literal", *, correlation: CurrentCorrelation | None = None
) -> float:
    """t^-1 sum_x E[int_0^t w_0 ds int_0^t w_x ds] = (2/t) int_0^t (t-u) g(u) du."""
    if t <= 0:
        raise ValueError("t must be positive")
    g = correlation if correlation is not None else CurrentCorrelation(model, t, kind)
    # Breakpoints keep the integrand resolved when Lambda*t is large.
    n_pieces = max(1, int(math.ceil(model.uniformization_rate * t / 20.0)))
    edges = np.linspace(0.0, t, n_pieces + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(lambda u: (t - u) * g(u), a, b, epsabs=0.0, epsrel=1e-10, limit=200)
        if not math.isfinite(val) or err > 1e-8 * max(abs(val), 1e-300) + 1e-14:
            raise QuadratureFailureError(f"quad error {err:.2e} on [{a}, {b}]")
        total += val
    return 2.0 * total / t


@dataclass(frozen=True)
class CurrentBoundRow:
    t: float
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs

    @property
    def violated(self) -> bool:
        return self.lhs > self.rhs * (1.0 + 1e-8)


@dataclass(frozen=True)
class CurrentBoundReport:
    L: int
    rho: float
    law: JumpLaw
    rows: tuple[CurrentBoundRow, ...]

    @property
    def holds(self) -> bool:
        return not any(r.violated for r in self.rows)

    @property
    def max_ratio(self) -> float:
        return max(r.ratio for r in self.rows)


def check_current_bound(model: OracleModel, t_grid: Sequence[float], kind: str = "literal") -> CurrentBoundReport:
    """Both sides of LHS(t) <= 12 |||w|||^2_{-1, 1/t} on the configured grid."""
    ts = [float(t) for t in t_grid]
    if any(t <= 0 for t in ts):
        raise ValueError("t_grid must be positive")
    g = CurrentCorrelation(model, max(ts), kind)
    rows = []
    for t in ts:
        lhs = exact_integrated_current_norm(model, t, kind, correlation=g)
        rhs = 12.0 * exact_h1_norm(model, 1.0 / t, kind)
        rows.append(CurrentBoundRow(t=t, lhs=lhs, rhs=rhs))
    return CurrentBoundReport(L=model.L, rho=model.rho, law=model.law, rows=tuple(rows))
