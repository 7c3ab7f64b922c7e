"""Batched replica execution with a worker-count-independent reduction.

Replicas 0..n-1 are split into ``config.batches`` contiguous batches fixed
by the replica count alone. Each batch is simulated by one worker, which
reduces its traces to per-replica scalars and batch sums. Batches are then
combined in batch order on the parent, so every output is bit-identical
whatever the number of workers.
"""

from __future__ import annotations

import csv
import errno
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, RunManifest, code_version, environment_info, replica_seed_digest
from .errors import ExclusionLabError, WrapDominatedError
from .estimators import (
    DiffusivityCurve,
    HeightVarianceResult,
    IdentityCheck,
    SumRuleResiduals,
    TimeGrid,
    TwoPointEstimate,
    centered_sites,
    characteristic_shift,
    check_light_cone,
    diffusivity_weights,
    fluctuation_window,
    green_kubo_rows,
    height_correction,
    height_profiles,
    height_window_sites,
    identity_check,
    second_class_rows,
    sum_rule_defect,
    two_point_rows,
)
from .law import tasep
from .trace import SimulationPlan, simulate_replica

SEED_DERIVATION = "numpy PCG64(SeedSequence(entropy=master_seed, spawn_key=(replica_id,)))"


def batch_bounds(replicas: int, batches: int) -> list[tuple[int, int]]:
    G = min(batches, replicas)
    edges = [g * replicas // G for g in range(G + 1)]
    return [(edges[g], edges[g + 1]) for g in range(G)]


@dataclass(frozen=True)
class ReductionSettings:
    """Per-time quantities shared by all batches of a run."""

    def_weights: np.ndarray | None  # (K, L), zero rows where D_def is unavailable
    def_valid: np.ndarray  # (K,) bool
    height_sites: tuple[np.ndarray | None, ...]  # per grid time


def reduction_settings(config: ExperimentConfig, grid: TimeGrid) -> ReductionSettings:
    law, rho, L = config.law, config.rho, config.L
    K = len(grid)
    valid = np.ones(K, dtype=bool)
    weights = None
    if "two_point" in config.observables:
        weights = np.zeros((K, L))
        for k, t in enumerate(grid):
            try:
                check_light_cone(L, law, t)
            except WrapDominatedError:
                if not config.unsafe_ring:
                    valid[k] = False
                    continue
            weights[k] = diffusivity_weights(L, t, law, rho, fluctuation_window(law, rho, t, L))
    sites: list[np.ndarray | None] = []
    for t in grid:
        if "height" not in config.observables:
            sites.append(None)
            continue
        w = min(fluctuation_window(tasep(), rho, t, L), (L - 3) // 2)
        sites.append(height_window_sites(tasep(), rho, t, w))
    return ReductionSettings(weights, valid, tuple(sites))


@dataclass
class BatchResult:
    first: int
    stop: int
    n_particles: np.ndarray
    attempts: np.ndarray
    jumps: np.ndarray
    s_sum: np.ndarray | None = None  # (K+1, L) incl. time 0
    s_sq: np.ndarray | None = None
    zeroth: np.ndarray | None = None  # (n, K+1) per-replica sum_x S_r
    first_moment: np.ndarray | None = None  # (n, K+1)
    max_defect: float = 0.0
    d_def: np.ndarray | None = None  # (n, K)
    d_gk: np.ndarray | None = None
    x_unwrapped: np.ndarray | None = None  # (n, K)
    x_wrapped: np.ndarray | None = None
    height: list | None = None  # per k: (sum_ht, sq_ht, sum_h0, sq_h0) or None


def run_batch(config: ExperimentConfig, grid: TimeGrid, settings: ReductionSettings, first: int, stop: int) -> BatchResult:
    law, rho, L = config.law, config.rho, config.L
    chi = rho * (1.0 - rho)
    obs = set(config.observables)
    times = (0.0,) + grid.points
    K = len(grid)
    n = stop - first
    plan = SimulationPlan(law, L, rho, times, frozenset(obs))
    t_arr = grid.as_array()
    xs = centered_sites(L).astype(np.float64)
    res = BatchResult(
        first, stop, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)
    )
    if "two_point" in obs:
        res.s_sum = np.zeros((K + 1, L))
        res.s_sq = np.zeros((K + 1, L))
        res.zeroth = np.empty((n, K + 1))
        res.first_moment = np.empty((n, K + 1))
        res.d_def = np.full((n, K), np.nan)
        W = settings.def_weights
        w0 = W[:, 0]
    if "current" in obs:
        res.d_gk = np.empty((n, K))
    if "second_class" in obs:
        res.x_unwrapped = np.empty((n, K), dtype=np.int64)
        res.x_wrapped = np.empty((n, K), dtype=np.int64)
    if "height" in obs:
        res.height = [
            None if s is None else [np.zeros(s.size), np.zeros(s.size), np.zeros(s.size), np.zeros(s.size)]
            for s in settings.height_sites
        ]

    for i, r in enumerate(range(first, stop)):
        try:
            tr = simulate_replica(plan, config.master_seed, r)
        except ExclusionLabError as exc:
            raise type(exc)(f"replica {r}: {exc}") from exc
        res.n_particles[i] = tr.n_particles
        res.attempts[i] = tr.attempts
        res.jumps[i] = tr.jumps
        if "two_point" in obs:
            occ = tr.occupancy
            rows = two_point_rows(np.broadcast_to(occ[0], occ.shape), occ, rho)
            res.s_sum += rows
            res.s_sq += rows * rows
            res.zeroth[i] = rows.sum(axis=1)
            res.first_moment[i] = rows @ xs / chi
            defect = float(np.max(np.abs(sum_rule_defect(rows, np.full(K + 1, tr.n_particles), rho))))
            res.max_defect = max(res.max_defect, defect)
            d = np.einsum("kl,kl->k", rows[1:], W) - W @ rows[0] + chi * w0
            res.d_def[i] = np.where(settings.def_valid, d, np.nan)
        if "current" in obs:
            res.d_gk[i] = green_kubo_rows(tr.j_integral[1:], t_arr, law, rho, L)
        if "second_class" in obs:
            res.x_unwrapped[i] = tr.x_unwrapped[1:]
            res.x_wrapped[i] = tr.x_wrapped[1:]
        if "height" in obs:
            occ0 = tr.occupancy[0][None, :]
            for k, sites in enumerate(settings.height_sites):
                if sites is None:
                    continue
                ht, h0 = height_profiles(occ0, tr.occupancy[k + 1][None, :], tr.bond_counts[k + 1, :1], sites)
                acc = res.height[k]
                acc[0] += ht[0]
                acc[1] += ht[0].astype(np.float64) ** 2
                acc[2] += h0[0]
                acc[3] += h0[0].astype(np.float64) ** 2
    return res


def _run_batch_star(args) -> BatchResult:
    return run_batch(*args)


@dataclass
class RunResult:
    """Reduced statistics of a run; the source of every output file."""

    config: ExperimentConfig
    grid: TimeGrid
    settings: ReductionSettings
    batches: list[BatchResult]
    wall_clock: float = 0.0
    workers: int = 1
    _cat: dict = field(default_factory=dict, repr=False)

    # -- pooled views ------------------------------------------------------

    def _concat(self, name: str) -> np.ndarray | None:
        if name not in self._cat:
            parts = [getattr(b, name) for b in self.batches]
            self._cat[name] = None if parts[0] is None else np.concatenate(parts)
        return self._cat[name]

    @property
    def replicas(self) -> int:
        return self.batches[-1].stop

    @property
    def times(self) -> np.ndarray:
        return self.grid.as_array()

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=0.0))
        if not hits.size:
            from .errors import GridMissError

            raise GridMissError(f"t={t} is not on the grid")
        return int(hits[0])

    @property
    def max_sum_rule_defect(self) -> float:
        return max(b.max_defect for b in self.batches)

    def _pooled(self, name: str) -> np.ndarray:
        total = None
        for b in self.batches:
            v = getattr(b, name)
            total = v.copy() if total is None else total + v
        return total

    def two_point(self, t: float) -> TwoPointEstimate:
        """Estimate at grid time t (t = 0 allowed)."""
        k = 0 if t == 0 else self.index_of(t) + 1
        n = self.replicas
        s_sum = self._pooled("s_sum")[k]
        s_sq = self._pooled("s_sq")[k]
        mean = s_sum / n
        var = np.maximum(s_sq - n * mean * mean, 0.0) / max(n - 1, 1)
        se = np.sqrt(var / n) if n > 1 else np.full_like(mean, np.inf)
        return TwoPointEstimate(t=float(t), s_values=mean, stderr=se, replicas=n, n_particles=self._concat("n_particles"))

    def sum_rules(self) -> list[tuple[float, SumRuleResiduals]]:
        chi = self.config.rho * (1.0 - self.config.rho)
        z = self._concat("zeroth")
        f = self._concat("first_moment")
        out = []
        for k, t in enumerate((0.0,) + self.grid.points):
            target = characteristic_shift(self.config.law, self.config.rho, t)
            zm, zse = _mean_se(z[:, k] - chi)
            fm, fse = _mean_se(f[:, k] - target)
            out.append((t, SumRuleResiduals(zm, zse, fm, fse, self.max_sum_rule_defect)))
        return out

    def _per_replica_curve(self, tag: str, values: np.ndarray) -> DiffusivityCurve:
        mean = values.mean(axis=0)
        n = values.shape[0]
        se = values.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(mean.shape, np.inf)
        bv = np.stack([values[b.first : b.stop].mean(axis=0) for b in self.batches])
        return DiffusivityCurve(self.grid, mean, se, tag, bv)

    def curve(self, tag: str) -> DiffusivityCurve:
        if tag == "definition":
            return self._per_replica_curve(tag, self._concat("d_def"))
        if tag == "green_kubo":
            return self._per_replica_curve(tag, self._concat("d_gk"))
        if tag == "second_class":
            x = self._concat("x_unwrapped")
            return self._per_replica_curve(tag, second_class_rows(x, self.times[None, :], self.config.law, self.config.rho))
        if tag == "height":
            vals, ses, bv = [], [], []
            for k in range(len(self.grid)):
                h = self.height(k)
                vals.append(h.value if h else np.nan)
                ses.append(h.stderr if h else np.nan)
            for b in self.batches:
                bv.append([_height_value([b], k, self) for k in range(len(self.grid))])
            return DiffusivityCurve(self.grid, np.array(vals), np.array(ses), tag, np.array(bv))
        raise ValueError(f"unknown estimator tag {tag!r}")

    def available_tags(self) -> list[str]:
        obs = set(self.config.observables)
        tags = []
        if "two_point" in obs:
            tags.append("definition")
        if "current" in obs:
            tags.append("green_kubo")
        if "second_class" in obs:
            tags.append("second_class")
        if "height" in obs:
            tags.append("height")
        return tags

    def height(self, k: int) -> HeightVarianceResult | None:
        sites = self.settings.height_sites[k]
        if sites is None:
            return None
        value = _height_value(self.batches, k, self)
        G = len(self.batches)
        if G > 1:
            reps = np.array([_height_value(self.batches[:g] + self.batches[g + 1 :], k, self) for g in range(G)])
            se = float(math.sqrt((G - 1) / G * ((reps - reps.mean()) ** 2).sum()))
        else:
            se = float("inf")
        var_t, var_0, n = _height_vars(self.batches, k)
        summand = var_t - var_0 + height_correction(sites, self.config.rho, self.times[k])
        return HeightVarianceResult(value, se, sites, summand, var_t)

    def second_class_histogram(self, t: float) -> np.ndarray:
        k = self.index_of(t)
        return np.bincount(self._concat("x_wrapped")[:, k] % self.config.L, minlength=self.config.L)

    def second_class_mean(self, t: float) -> tuple[float, float]:
        k = self.index_of(t)
        return _mean_se(self._concat("x_unwrapped")[:, k].astype(np.float64))

    def identity(self, t: float) -> IdentityCheck:
        k = self.index_of(t)
        est = self.two_point(t)
        return identity_check(
            self.second_class_histogram(t), est.s_values, est.stderr, self.config.rho, seed=self.config.master_seed + k
        )

    def event_counts(self) -> dict:
        att = self._concat("attempts")
        jmp = self._concat("jumps")
        return {
            "attempts": int(att.sum()),
            "jumps": int(jmp.sum()),
            "per_batch": [[int(b.attempts.sum()), int(b.jumps.sum())] for b in self.batches],
        }

    def manifest(self) -> RunManifest:
        return RunManifest(
            config=self.config.to_dict(),
            code_version=code_version(),
            seed_derivation=SEED_DERIVATION,
            replica_seeds=[replica_seed_digest(self.config.master_seed, r) for r in range(self.replicas)],
            batches=[[b.first, b.stop] for b in self.batches],
            wall_clock_seconds=self.wall_clock,
            workers=self.workers,
            event_counts=self.event_counts(),
            unsafe_ring=self.config.unsafe_ring,
            environment=environment_info(),
        )


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    n = v.size
    m = float(v.mean())
    return m, (float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf"))


def _height_vars(batches: list[BatchResult], k: int) -> tuple[np.ndarray, np.ndarray, int]:
    n = sum(b.stop - b.first for b in batches)
    acc = [sum(b.height[k][j] for b in batches) for j in range(4)]
    with np.errstate(invalid="ignore", divide="ignore"):  # nan for a single replica
        var_t = (acc[1] - acc[0] ** 2 / n) / (n - 1)
        var_0 = (acc[3] - acc[2] ** 2 / n) / (n - 1)
    return var_t, var_0, n


def _height_value(batches: list[BatchResult], k: int, run: RunResult) -> float:
    sites = run.settings.height_sites[k]
    if sites is None or sum(b.stop - b.first for b in batches) < 2:
        return float("nan")
    var_t, var_0, _ = _height_vars(batches, k)
    rho = run.config.rho
    t = run.times[k]
    summand = var_t - var_0 + height_correction(sites, rho, t)
    return float(summand.sum() / (4 * rho * (1 - rho) * t))


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> RunResult:
    """Simulate every replica of ``config`` and reduce in batch order."""
    grid = TimeGrid.geometric(config.grid.t0, config.grid.ratio, config.t_max)
    settings = reduction_settings(config, grid)
    bounds = batch_bounds(config.replicas, config.batches)
    n_workers = config.resolved_workers(workers)
    start = time.perf_counter()
    jobs = [(config, grid, settings, a, b) for a, b in bounds]
    if n_workers == 1 or len(jobs) == 1:
        results = [_run_batch_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs)), mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_run_batch_star, jobs))
    wall = time.perf_counter() - start
    return RunResult(config, grid, settings, results, wall, n_workers)


# ----------------------------------------------------------------------------
# output files


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        if exc.errno == errno.ENOSPC:
            from .errors import DiskFullError

            raise DiskFullError(f"disk full while writing {path}") from exc
        raise


def write_outputs(run: RunResult, out_dir: str | Path) -> Path:
    """Write every CSV and the manifest; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = run.config
    obs = set(cfg.observables)
    times = run.times
    if "two_point" in obs:
        rows = []
        for t in (0.0,) + run.grid.points:
            est = run.two_point(t)
            x, s, se = est.centered()
            rows.extend([_fmt(t), int(xi), _fmt(si), _fmt(ei)] for xi, si, ei in zip(x, s, se))
        _write_csv(out / "two_point.csv", ["t", "x", "S", "stderr"], rows)
        _write_csv(
            out / "sum_rules.csv",
            ["t", "zeroth", "zeroth_stderr", "first", "first_stderr", "max_identity_defect"],
            (
                [_fmt(t), _fmt(r.zeroth), _fmt(r.zeroth_stderr), _fmt(r.first), _fmt(r.first_stderr), _fmt(r.max_identity_defect)]
                for t, r in run.sum_rules()
            ),
        )
    drows, brows = [], []
    for tag in run.available_tags():
        c = run.curve(tag)
        for k, t in enumerate(times):
            if math.isfinite(c.d_values[k]):
                drows.append([_fmt(t), tag, _fmt(c.d_values[k]), _fmt(c.stderr[k])])
        for g, bvals in enumerate(c.batch_values):
            brows.extend([tag, g, _fmt(t), _fmt(v)] for t, v in zip(times, bvals) if math.isfinite(v))
    drows.sort(key=lambda r: (float(r[0]), r[1]))
    _write_csv(out / "diffusivity.csv", ["t", "estimator_tag", "D", "stderr"], drows)
    _write_csv(out / "diffusivity_batches.csv", ["estimator_tag", "batch", "t", "D"], brows)
    if "second_class" in obs:
        rows = []
        xs = centered_sites(cfg.L)
        order = np.argsort(xs)
        for t in times:
            counts = run.second_class_histogram(t)[order]
            n = counts.sum()
            rows.extend([_fmt(t), int(x), int(c), _fmt(c / n)] for x, c in zip(xs[order], counts) if c)
        _write_csv(out / "second_class_hist.csv", ["t", "x", "count", "probability"], rows)
        if "two_point" in obs:
            rows = []
            for t in times:
                chk = run.identity(t)
                m, mse = run.second_class_mean(t)
                rows.append([_fmt(t), _fmt(chk.tv), _fmt(chk.tv_corrected), _fmt(chk.bootstrap_se), _fmt(m), _fmt(mse)])
            _write_csv(
                out / "second_class_identity.csv",
                ["t", "tv", "tv_corrected", "bootstrap_se", "mean_displacement", "mean_stderr"],
                rows,
            )
    if "height" in obs:
        rows = []
        for k, t in enumerate(times):
            h = run.height(k)
            if h is None:
                continue
            rows.extend([_fmt(t), int(x), _fmt(v), _fmt(s)] for x, v, s in zip(h.sites, h.var_h, h.summand))
        _write_csv(out / "height_variance.csv", ["t", "x", "var_h", "summand"], rows)
    (out / "run_manifest.json").write_text(run.manifest().to_json() + "\n")
    return out
