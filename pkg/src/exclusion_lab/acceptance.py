"""The acceptance suite, shared by ``exclusion-lab validate`` and the tests.

Each criterion function returns a :class:`CriterionResult`. Simulation
runs are memoized in a :class:`RunCache` so that criteria built on the
same run (5, 6, 7, 9) simulate it once. ``quick`` scale runs the reduced
subset described in the README; ``full`` runs every criterion at its
stated size.
"""

from __future__ import annotations

import contextlib
import filecmp
import json
import math
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ExperimentConfig
from .estimators import TimeGrid
from .law import build_jump_law, tasep
from .oracle import build_oracle, check_current_bound, exact_h1_norm, exact_two_point
from .runner import RunResult, run_experiment, write_outputs
from .scaling import (
    compare_two_laws,
    extract_h1_profile,
    fit_power_law,
    h1_exponent,
    laplace_slope,
    laplace_transform_tD,
)

SEED = 20261015
LAW_075 = [[1, 0.75], [-1, 0.25]]
TASEP = [[1, 1.0]]
SYMMETRIC = [[1, 0.5], [-1, 0.5]]
IDENTITY_TOL = 1e-10


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    scale: str = "full"

    def line(self) -> str:
        return f"criterion {self.number:2d} [{self.scale}] {'PASS' if self.passed else 'FAIL'}: {self.title} -- {self.detail}"


@dataclass
class RunCache:
    workers: int | None = None
    runs: dict[str, RunResult] = field(default_factory=dict)

    def get(self, name: str, **config) -> RunResult:
        if name not in self.runs:
            config.setdefault("master_seed", SEED)
            with warnings.catch_warnings():
                # L = 8 oracle comparisons are unsafe rings on purpose
                warnings.simplefilter("ignore", UserWarning)
                cfg = ExperimentConfig.from_dict(config)
            self.runs[name] = run_experiment(cfg, workers=self.workers)
        return self.runs[name]

    def max_identity_defect(self) -> tuple[float, int]:
        """Largest per-replica zeroth sum-rule defect over every cached run with two-point data."""
        worst, n = 0.0, 0
        for run in self.runs.values():
            if "two_point" in run.config.observables:
                worst = max(worst, run.max_sum_rule_defect)
                n += 1
        return worst, n


def _timed(fn: Callable[..., CriterionResult]) -> Callable[..., CriterionResult]:
    def wrapper(*args, **kwargs) -> CriterionResult:
        start = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - start
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ----------------------------------------------------------------------------
# criteria


@_timed
def criterion_1(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Monte Carlo two-point function against the exact oracle on L = 8."""
    cases = [(TASEP, 0.3), (TASEP, 0.5), (LAW_075, 0.3), (LAW_075, 0.5)]
    replicas = 100_000
    if scale == "quick":
        cases, replicas = [(TASEP, 0.5)], 20_000
    worst = 0.0
    where = ""
    for law_pairs, rho in cases:
        run = cache.get(
            f"c1-{law_pairs}-{rho}-{replicas}",
            law=law_pairs, rho=rho, L=8, t_max=2.0, grid={"t0": 0.5, "ratio": 2.0}, replicas=replicas,
            observables=["two_point"], unsafe_ring=True,
        )
        model = build_oracle(build_jump_law(law_pairs), 8, rho)
        for t in (0.5, 1.0, 2.0):
            est = run.two_point(t)
            z = np.abs(est.s_values - exact_two_point(model, t)) / est.stderr
            if z.max() > worst:
                worst, where = float(z.max()), f"law {law_pairs} rho={rho} t={t}"
    return CriterionResult(1, "oracle equivalence of S(x,t) on L=8", worst <= 4.0,
                           f"max |z| = {worst:.3f} ({where}), {len(cases)} cases x 3 times x 8 sites, {replicas} replicas",
                           scale=scale)


@_timed
def criterion_2(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Per-replica zeroth sum rule over every run, plus the first-moment sum rule at b = 0.6, rho = 0.3."""
    reps, L, t_max = (2000, 1024, 100.0) if scale == "full" else (200, 128, 10.0)
    run = cache.get(f"c2-{scale}", law=[[1, 0.8], [-1, 0.2]], rho=0.3, L=L, t_max=t_max, replicas=reps,
                    observables=["two_point"])
    worst_first = 0.0
    for t, r in run.sum_rules()[1:]:
        worst_first = max(worst_first, abs(r.first) / r.first_stderr)
    defect, nruns = cache.max_identity_defect()
    ok = defect <= IDENTITY_TOL and worst_first <= 4.0
    return CriterionResult(2, "exact per-replica sum rule and first-moment sum rule", ok,
                           f"max identity defect {defect:.2e} over {nruns} runs; max first-moment |z| = {worst_first:.3f} "
                           f"over {len(run.grid)} grid times", scale=scale)


@_timed
def criterion_3(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Mean-zero control: D(t) = sigma^2 = 1 at every grid time and exponent near 0."""
    reps = 10_000 if scale == "full" else 1000
    run = cache.get(f"c3-{scale}", law=SYMMETRIC, rho=0.5, L=1024, t_max=100.0, replicas=reps, observables=["two_point"])
    c = run.curve("definition")
    z = np.abs(c.d_values - 1.0) / c.stderr
    fit = fit_power_law(c)
    ok = bool(z.max() <= 3.0) and abs(fit.exponent) <= 0.1
    return CriterionResult(3, "symmetric control D(t) = 1, exponent 0", ok,
                           f"max |D-1|/se = {z.max():.3f} over {len(c.t)} times; exponent {fit.exponent:.4f} "
                           f"+- {fit.exponent_stderr:.4f} on [{fit.window[0]:.3g}, {fit.window[1]:.3g}]; {reps} replicas",
                           scale=scale)


@_timed
def criterion_4(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Exact integrated-current inequality on small rings."""
    sizes = (6, 8) if scale == "full" else (6,)
    worst = 0.0
    holds = True
    n = 0
    for L in sizes:
        for law in (tasep(), build_jump_law({1: 0.75, -1: 0.25})):
            for rho in (0.3, 0.5):
                rep = check_current_bound(build_oracle(law, L, rho), [0.5, 1.0, 2.0, 5.0, 10.0])
                holds &= rep.holds
                worst = max(worst, rep.max_ratio)
                n += len(rep.rows)
    return CriterionResult(4, "integrated current <= 12 |||w|||^2_{-1,1/t} (exact)", holds,
                           f"{n} rows, max LHS/RHS = {worst:.4f}", scale=scale)


def _big_tasep(cache: RunCache) -> RunResult:
    return cache.get("tasep-4096", law=TASEP, rho=0.5, L=4096, t_max=1000.0, replicas=10_000,
                     observables=["current", "two_point"])


@_timed
def criterion_5(cache: RunCache, scale: str = "full") -> CriterionResult:
    """D_def exponent on the last decade of TASEP, L = 4096, t_max = 1000."""
    run = _big_tasep(cache)
    fit = fit_power_law(run.curve("definition"))
    ok = 0.25 <= fit.exponent <= 0.45 and fit.exponent - 3.0 * fit.exponent_stderr > 0
    return CriterionResult(5, "superdiffusive exponent window for D_def", ok,
                           f"exponent {fit.exponent:.4f} +- {fit.exponent_stderr:.4f} (95% CI {fit.exponent_ci[0]:.4f}.."
                           f"{fit.exponent_ci[1]:.4f}) on [{fit.window[0]:.4g}, {fit.window[1]:.4g}], "
                           f"{run.replicas} replicas", scale=scale)


def _laplace_closed_forms() -> tuple[bool, float]:
    """Quadrature against Gamma(2+a) lambda^-(2+a) for t^a inputs, T = 1000."""
    grid = TimeGrid.geometric(1.0, 2**0.5, 1000.0)
    from .estimators import DiffusivityCurve

    worst = 0.0
    lam = np.geomspace(10.0 / 1000.0, 0.1, 9)
    for a in (0.0, 0.25, 1.0 / 3.0, 0.5):
        t = grid.as_array()
        c = DiffusivityCurve(grid, t**a, np.zeros_like(t), "synthetic")
        lp = laplace_transform_tD(c, lam)
        exact = math.gamma(2 + a) * lam ** (-(2 + a))
        worst = max(worst, float(np.max(np.abs(lp.values / exact - 1))))
    return worst <= 0.01, worst


@_timed
def criterion_6(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Laplace log-log slope of t D(t) and closed-form validation of the quadrature."""
    ok_q, err = _laplace_closed_forms()
    if scale == "quick":
        return CriterionResult(6, "Laplace quadrature closed forms (t^a, a in {0, 1/4, 1/3, 1/2})", ok_q,
                               f"max relative error {err:.2e}", scale=scale)
    run = _big_tasep(cache)
    lp = laplace_transform_tD(run.curve("green_kubo"), short_time=1.0)
    sl = laplace_slope(lp)
    lo, hi = -7.0 / 3.0 - 0.4, -7.0 / 3.0 + 0.4
    ok = ok_q and lo <= sl.slope <= hi
    return CriterionResult(6, "Laplace slope of tD(t) near -7/3", ok,
                           f"slope {sl.slope:.4f} +- {sl.stderr:.4f} on lambda in [{sl.lambdas[0]:.3g}, {sl.lambdas[1]:.3g}]"
                           f" (green_kubo curve, max tail fraction {lp.tail_fraction.max():.1e}); quadrature closed-form"
                           f" error {err:.1e}", scale=scale)


@_timed
def criterion_7(cache: RunCache, scale: str = "full") -> CriterionResult:
    """H_{-1} profile: exponent from the large run, and L = 8 values against the exact resolvent."""
    small = cache.get("c7-L8", law=TASEP, rho=0.5, L=8, t_max=40.0, grid={"t0": 0.05, "ratio": 2**0.25},
                      replicas=40_000, observables=["current"], unsafe_ring=True)
    law = tasep()
    lp = laplace_transform_tD(small.curve("green_kubo"), [1.0, 0.5], short_time=1.0)
    h1 = extract_h1_profile(lp, law, 0.5)
    model = build_oracle(law, 8, 0.5)
    z = [abs(h1.values[i] - exact_h1_norm(model, lam, "transport")) / h1.stderr[i] for i, lam in enumerate(lp.lambdas)]
    detail = f"L=8: |z| = {z[0]:.3f} (lambda=1), {z[1]:.3f} (lambda=0.5)"
    ok = max(z) <= 4.0
    if scale == "full":
        run = _big_tasep(cache)
        big = extract_h1_profile(laplace_transform_tD(run.curve("green_kubo"), short_time=1.0), law, 0.5)
        he = h1_exponent(big)
        lo, hi = -1.0 / 3.0 - 0.15, -1.0 / 3.0 + 0.15
        ok = ok and lo <= he.slope <= hi
        detail = f"exponent {he.slope:.4f} +- {he.stderr:.4f} on lambda in [{he.lambdas[0]:.3g}, {he.lambdas[1]:.3g}]; " + detail
    return CriterionResult(7, "H_-1 profile exponent and exact small-ring values", ok, detail, scale=scale)


@_timed
def criterion_8(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Four diffusivity estimators pairwise consistent on TASEP, L = 1024."""
    reps = 4000 if scale == "full" else 400
    run = cache.get(f"c8-{scale}", law=TASEP, rho=0.5, L=1024, t_max=100.0, replicas=reps,
                    observables=["current", "height", "second_class", "two_point"])
    tags = ["definition", "green_kubo", "second_class", "height"]
    curves = {tag: run.curve(tag) for tag in tags}
    worst = 0.0
    where = ""
    parts = []
    for t in (50.0, 100.0):
        k = run.index_of(t)
        parts.append(f"t={t:g}: " + ", ".join(f"{tag} {curves[tag].d_values[k]:.3f}+-{curves[tag].stderr[k]:.3f}" for tag in tags))
        for i, a in enumerate(tags):
            for b in tags[i + 1 :]:
                ca, cb = curves[a], curves[b]
                z = abs(ca.d_values[k] - cb.d_values[k]) / math.hypot(ca.stderr[k], cb.stderr[k])
                if z > worst:
                    worst, where = z, f"{a} vs {b} at t={t:g}"
    return CriterionResult(8, "estimator quadrangle", worst <= 4.0,
                           f"max pairwise |z| = {worst:.3f} ({where}); " + "; ".join(parts), scale=scale)


@_timed
def criterion_9(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Laplace slopes: TASEP and {1: 0.75, -1: 0.25} agree; both separate from the symmetric control."""
    a = _big_tasep(cache).curve("green_kubo")
    b = cache.get("law075-4096", law=LAW_075, rho=0.5, L=4096, t_max=1000.0, replicas=2000,
                  observables=["current"]).curve("green_kubo")
    c = cache.get("symmetric-4096", law=SYMMETRIC, rho=0.5, L=4096, t_max=1000.0, replicas=100,
                  observables=["current"]).curve("green_kubo")
    ab = compare_two_laws(a, b, short_time_a=1.0, short_time_b=1.0)
    ac = compare_two_laws(a, c, short_time_a=1.0, short_time_b=1.0)
    bc = compare_two_laws(b, c, short_time_a=1.0, short_time_b=1.0)
    ok = ab.agree(0.3) and ac.separated(3.0) and bc.separated(3.0)
    return CriterionResult(
        9, "universality of the Laplace slope", ok,
        f"TASEP {ab.slope_a.slope:.4f}+-{ab.slope_a.stderr:.4f}, law 0.75/0.25 {ab.slope_b.slope:.4f}+-{ab.slope_b.stderr:.4f}, "
        f"symmetric {ac.slope_b.slope:.4f}; |diff| = {abs(ab.difference):.4f}; separations "
        f"{abs(ac.difference) / ac.difference_stderr:.1f} and {abs(bc.difference) / bc.difference_stderr:.1f} sigma",
        scale=scale)


def _compare_dirs(a: Path, b: Path) -> list[str]:
    """Names of files that differ (manifests compared without their volatile fields)."""
    diffs = []
    names = sorted({p.name for p in a.iterdir()} | {p.name for p in b.iterdir()})
    for name in names:
        pa, pb = a / name, b / name
        if not (pa.exists() and pb.exists()):
            diffs.append(name)
        elif name == "run_manifest.json":
            from .config import RunManifest

            ma = RunManifest.from_json(pa.read_text()).reproducible_part()
            mb = RunManifest.from_json(pb.read_text()).reproducible_part()
            if json.dumps(ma, sort_keys=True) != json.dumps(mb, sort_keys=True):
                diffs.append(name)
        elif not filecmp.cmp(pa, pb, shallow=False):
            diffs.append(name)
    return diffs


@_timed
def criterion_10(cache: RunCache, scale: str = "full") -> CriterionResult:
    """Identical config and seed give byte-identical outputs with 1 and 8 workers."""
    cfg = ExperimentConfig.from_dict(dict(law=TASEP, rho=0.5, L=128, t_max=10.0, replicas=64, master_seed=SEED,
                                          batches=16))
    with tempfile.TemporaryDirectory() as tmp:
        d1 = write_outputs(run_experiment(cfg, workers=1), Path(tmp) / "w1")
        d8 = write_outputs(run_experiment(cfg, workers=8), Path(tmp) / "w8")
        diffs = _compare_dirs(d1, d8)
        n = len(list(d1.iterdir()))
    return CriterionResult(10, "byte-identical outputs across 1 and 8 workers", not diffs,
                           f"{n} files compared, differing: {diffs or 'none'}", scale=scale)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}
QUICK = (1, 4, 6, 2)  # 2 last: it audits every run made before it
FULL = (1, 3, 4, 5, 6, 7, 8, 9, 10, 2)


def run_suite(scale: str = "quick", workers: int | None = None, cache: RunCache | None = None) -> list[CriterionResult]:
    cache = cache or RunCache(workers=workers)
    order = QUICK if scale == "quick" else FULL
    results = [CRITERIA[n](cache, scale) for n in order]
    return sorted(results, key=lambda r: r.number)


def write_report(results: list[CriterionResult], path: str | Path) -> Path:
    p = Path(path)
    lines = [
        "# Acceptance report",
        "",
        "| # | criterion | scale | result | seconds | detail |",
        "|---|---|---|---|---|---|",
    ]
    for r in results:
        lines.append(f"| {r.number} | {r.title} | {r.scale} | {'PASS' if r.passed else 'FAIL'} | {r.seconds:.1f} | {r.detail} |")
    lines.append("")
    p.write_text("\n".join(lines))
    return p


__all__ = ["CRITERIA", "CriterionResult", "RunCache", "injected_fault", "run_suite", "write_report"]


def _two_point_rows_wrap_off_by_one(occ0: np.ndarray, occt: np.ndarray, rho: float) -> np.ndarray:
    """Deliberately broken two-point rows: site y + x is wrapped modulo L - 1."""
    a = np.atleast_2d(occ0).astype(np.float64) - rho
    b = np.atleast_2d(occt).astype(np.float64) - rho
    L = a.shape[1]
    y = np.arange(L)
    out = np.empty_like(a)
    for x in range(L):
        out[:, x] = (b[:, (y + x) % (L - 1)] * a).sum(axis=1) / L
    return out


FAULTS = {"wrap-off-by-one": _two_point_rows_wrap_off_by_one}


@contextlib.contextmanager
def injected_fault(name: str | None):
    """Temporarily swap a known-bad implementation into the runner (mutation fixture).

    Only in-process batches see the swap, so runs made under it need one worker.
    """
    if name is None:
        yield
        return
    from . import runner

    original = runner.two_point_rows
    runner.two_point_rows = FAULTS[name]
    try:
        yield
    finally:
        runner.two_point_rows = original
