"""Post-processing of simulation output directories."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigInvalidError, ExclusionLabError, MissingInputError
from .estimators import DiffusivityCurve, TimeGrid, TwoPointEstimate
from .law import JumpLaw
from .scaling import (
    compare_two_laws,
    extract_h1_profile,
    fit_power_law,
    fit_power_law_halves,
    h1_exponent,
    laplace_slope,
    laplace_transform_tD,
    scaling_collapse,
)

# Exponent windows used for pass/fail lines in the summary.
EXPONENT_WINDOW = (0.25, 0.45)
LAPLACE_WINDOW = (-7.0 / 3.0 - 0.4, -7.0 / 3.0 + 0.4)
H1_WINDOW = (-1.0 / 3.0 - 0.15, -1.0 / 3.0 + 0.15)
UNIVERSALITY_TOL = 0.3


@dataclass(frozen=True)
class AnalysisConfig:
    fit_window: tuple[float, float] | None = None
    lambdas: tuple[float, ...] | None = None
    collapse_times: tuple[float, ...] | None = None
    collapse_exponent: float = 2.0 / 3.0
    compare_tag: str = "green_kubo"

    _KEYS = ("fit_window", "lambdas", "collapse_times", "collapse_exponent", "compare_tag")

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ConfigInvalidError(f"unknown analysis keys: {sorted(unknown)}")
        fw = d.get("fit_window")
        if fw is not None and (len(fw) != 2 or not fw[0] < fw[1]):
            raise ConfigInvalidError("fit_window must be [t_min, t_max] with t_min < t_max")
        return cls(
            fit_window=None if fw is None else (float(fw[0]), float(fw[1])),
            lambdas=None if d.get("lambdas") is None else tuple(float(v) for v in d["lambdas"]),
            collapse_times=None if d.get("collapse_times") is None else tuple(float(v) for v in d["collapse_times"]),
            collapse_exponent=float(d.get("collapse_exponent", 2.0 / 3.0)),
            compare_tag=str(d.get("compare_tag", "green_kubo")),
        )

    @classmethod
    def load(cls, path: str | Path | None) -> "AnalysisConfig":
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalidError(f"cannot read analysis config {path}: {exc}") from exc


@dataclass
class RunData:
    path: Path
    config: ExperimentConfig
    curves: dict[str, DiffusivityCurve]
    two_point: dict[float, TwoPointEstimate] = field(default_factory=dict)

    @property
    def law(self) -> JumpLaw:
        return self.config.law

    @property
    def rho(self) -> float:
        return self.config.rho


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_run(path: str | Path) -> RunData:
    """Read the manifest, diffusivity curves and (if present) two-point estimates of a run."""
    p = Path(path)
    manifest = p / "run_manifest.json"
    diff = p / "diffusivity.csv"
    for f in (manifest, diff):
        if not f.exists():
            raise MissingInputError(f"{f} not found")
    config = ExperimentConfig.from_json(manifest.read_text())
    by_tag: dict[str, list[tuple[float, float, float]]] = {}
    for r in _read_rows(diff):
        by_tag.setdefault(r["estimator_tag"], []).append((float(r["t"]), float(r["D"]), float(r["stderr"])))
    batches: dict[str, dict[int, dict[float, float]]] = {}
    bfile = p / "diffusivity_batches.csv"
    if bfile.exists():
        for r in _read_rows(bfile):
            batches.setdefault(r["estimator_tag"], {}).setdefault(int(r["batch"]), {})[float(r["t"])] = float(r["D"])
    curves = {}
    for tag, rows in by_tag.items():
        rows.sort()
        t = tuple(r[0] for r in rows)
        bv = None
        if tag in batches:
            try:
                bv = np.array([[b[ti] for ti in t] for _, b in sorted(batches[tag].items())])
            except KeyError:
                bv = None
        curves[tag] = DiffusivityCurve(
            TimeGrid(t), np.array([r[1] for r in rows]), np.array([r[2] for r in rows]), tag, bv
        )
    two_point: dict[float, TwoPointEstimate] = {}
    tp = p / "two_point.csv"
    if tp.exists():
        acc: dict[float, list[tuple[int, float, float]]] = {}
        for r in _read_rows(tp):
            acc.setdefault(float(r["t"]), []).append((int(r["x"]), float(r["S"]), float(r["stderr"])))
        L = config.L
        for t, rows in acc.items():
            s = np.zeros(L)
            se = np.zeros(L)
            for x, v, e in rows:
                s[x % L] = v
                se[x % L] = e
            two_point[t] = TwoPointEstimate(t, s, se, config.replicas)
    return RunData(p, config, curves, two_point)


@dataclass
class Claim:
    description: str
    measured: str
    target: str
    status: str  # pass | fail | report | error


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def _fmt(v: float) -> str:
    return repr(float(v))


def _write(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def analyze_run(
    input_dir: str | Path,
    out_dir: str | Path | None = None,
    config: AnalysisConfig | None = None,
    compare_dir: str | Path | None = None,
) -> list[Claim]:
    """Fits, Laplace and H_{-1} profiles, collapse and (optionally) a two-law comparison.

    Writes fits.csv, laplace_profile.csv, h1_profile.csv, collapse.csv,
    compare.csv (with ``compare_dir``) and summary.md into ``out_dir``
    (default: the input directory) and returns the summary claims.
    """
    cfg = config or AnalysisConfig()
    run = load_run(input_dir)
    out = Path(out_dir) if out_dir is not None else run.path
    out.mkdir(parents=True, exist_ok=True)
    law, rho = run.law, run.rho
    claims: list[Claim] = []
    fit_rows, lap_rows, h1_rows = [], [], []
    for tag, curve in sorted(run.curves.items()):
        try:
            fit = fit_power_law(curve, cfg.fit_window)
        except ExclusionLabError as exc:
            claims.append(Claim(f"power-law fit of D ({tag})", f"error: {exc}", "-", "error"))
            continue
        for kind, f in [("full", fit)] + [(f"half{i + 1}", h) for i, h in enumerate(fit_power_law_halves(curve, cfg.fit_window))]:
            fit_rows.append(
                [tag, kind, _fmt(f.window[0]), _fmt(f.window[1]), _fmt(f.exponent), _fmt(f.exponent_ci[0]),
                 _fmt(f.exponent_ci[1]), _fmt(f.amplitude), _fmt(f.residual_rms), f.n_points]
            )
        if law.mean_zero:
            claims.append(
                Claim(f"diffusive control: exponent of D ({tag}) near 0", f"{fit.exponent:.4f}", "|alpha| <= 0.1",
                      _status(abs(fit.exponent) <= 0.1))
            )
        else:
            lo, hi = EXPONENT_WINDOW
            ok = lo <= fit.exponent <= hi and fit.exponent - 3 * fit.exponent_stderr > 0
            claims.append(
                Claim(f"superdiffusive growth: exponent of D ({tag}) on {fit.window[0]:.4g}..{fit.window[1]:.4g}",
                      f"{fit.exponent:.4f} +- {fit.exponent_stderr:.4f}", f"in [{lo}, {hi}], > 0 at 3 sigma", _status(ok))
            )
        try:
            lp = laplace_transform_tD(curve, cfg.lambdas, short_time=law.second_moment)
        except ExclusionLabError as exc:
            claims.append(Claim(f"Laplace profile ({tag})", f"error: {exc}", "-", "error"))
            continue
        for i, lam in enumerate(lp.lambdas):
            lap_rows.append([tag, _fmt(lam), _fmt(lp.values[i]), _fmt(lp.stderr[i]), _fmt(lp.tail_fraction[i])])
        sl = laplace_slope(lp)
        lo, hi = LAPLACE_WINDOW
        if law.mean_zero:
            claims.append(Claim(f"Laplace slope of tD ({tag}), diffusive control", f"{sl.slope:.4f} +- {sl.stderr:.4f}",
                                "-2 (report)", "report"))
        else:
            claims.append(Claim(f"Laplace slope of tD ({tag})", f"{sl.slope:.4f} +- {sl.stderr:.4f}",
                                f"in [{lo:.4f}, {hi:.4f}]", _status(lo <= sl.slope <= hi)))
        h1 = extract_h1_profile(lp, law, rho, allow_negative=True)
        for i, lam in enumerate(h1.lambdas):
            h1_rows.append([tag, _fmt(lam), _fmt(h1.values[i]), _fmt(h1.stderr[i]), int(h1.negative[i])])
        if law.mean_zero:
            continue
        if h1.negative.any():
            claims.append(Claim(f"H_-1 profile exponent ({tag})", "negative estimates", "-", "error"))
        else:
            he = h1_exponent(h1)
            lo, hi = H1_WINDOW
            claims.append(Claim(f"H_-1 profile exponent ({tag})", f"{he.slope:.4f} +- {he.stderr:.4f}",
                                f"in [{lo:.4f}, {hi:.4f}]", _status(lo <= he.slope <= hi)))
    _write(out / "fits.csv", ["estimator_tag", "fit", "window_lo", "window_hi", "exponent", "ci_lo", "ci_hi", "amplitude",
                              "residual_rms", "n_points"], fit_rows)
    _write(out / "laplace_profile.csv", ["estimator_tag", "lambda", "value", "stderr", "tail_fraction"], lap_rows)
    _write(out / "h1_profile.csv", ["estimator_tag", "lambda", "value", "stderr", "negative"], h1_rows)

    if run.two_point:
        times = sorted(t for t in run.two_point if t > 0)
        if cfg.collapse_times is not None:
            times = [t for t in times if any(math.isclose(t, c, rel_tol=1e-9) for c in cfg.collapse_times)]
        else:
            times = times[-7::3] if len(times) >= 7 else times
        if len(times) >= 2:
            rep = scaling_collapse([run.two_point[t] for t in times], law, rho, exponent=cfg.collapse_exponent)
            _write(out / "collapse.csv", ["t_a", "t_b", "exponent", "l1_discrepancy"],
                   ([_fmt(a), _fmt(b), _fmt(rep.exponent), _fmt(v)] for (a, b), v in sorted(rep.discrepancy.items())))
            claims.append(Claim(f"scaling collapse with exponent {cfg.collapse_exponent:.4g}",
                                f"trend {rep.trend()} over t = {', '.join(f'{t:.4g}' for t in times)}", "report", "report"))

    if compare_dir is not None:
        other = load_run(compare_dir)
        tag = cfg.compare_tag
        if tag not in run.curves or tag not in other.curves:
            raise MissingInputError(f"both runs need a {tag!r} curve for the comparison")
        cmp = compare_two_laws(run.curves[tag], other.curves[tag], lambdas=cfg.lambdas,
                               short_time_a=law.second_moment, short_time_b=other.law.second_moment)
        _write(out / "compare.csv", ["law_a", "law_b", "slope_a", "stderr_a", "slope_b", "stderr_b", "difference",
                                     "difference_stderr"],
               [[law.label(), other.law.label(), _fmt(cmp.slope_a.slope), _fmt(cmp.slope_a.stderr),
                 _fmt(cmp.slope_b.slope), _fmt(cmp.slope_b.stderr), _fmt(cmp.difference), _fmt(cmp.difference_stderr)]])
        if law.mean_zero == other.law.mean_zero:
            claims.append(Claim("universality: Laplace slopes of two asymmetric laws agree" if not law.mean_zero else
                                "Laplace slopes of two laws agree",
                                f"difference {cmp.difference:.4f} +- {cmp.difference_stderr:.4f}",
                                f"|difference| <= {UNIVERSALITY_TOL}", _status(cmp.agree(UNIVERSALITY_TOL))))
        else:
            claims.append(Claim("asymmetric and mean-zero laws have distinguishable Laplace slopes",
                                f"difference {cmp.difference:.4f} +- {cmp.difference_stderr:.4f}",
                                "separated at > 3 sigma", _status(cmp.separated(3.0))))
    write_summary(out / "summary.md", run, claims)
    return claims


def write_summary(path: Path, run: RunData, claims: list[Claim]) -> None:
    c = run.config
    lines = [
        "# Analysis summary",
        "",
        f"- input: `{run.path}`",
        f"- law: `{c.law.label()}` (drift {c.law.drift:.6g}, second moment {c.law.second_moment:.6g})",
        f"- rho = {c.rho}, L = {c.L}, t_max = {c.t_max}, replicas = {c.replicas}, seed = {c.master_seed}",
        "",
        "| claim | measured | target | status |",
        "|---|---|---|---|",
    ]
    lines += [f"| {k.description} | {k.measured} | {k.target} | {k.status} |" for k in claims]
    lines.append("")
    path.write_text("\n".join(lines))


def write_synthetic_fixture(out_dir: str | Path, exponent: float = 1.0 / 3.0, amplitude: float = 3.0) -> Path:
    """A run directory whose D(t) is exactly amplitude * t**exponent (for analysis tests)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ExperimentConfig.from_dict(dict(law=[[1, 1.0]], rho=0.5, L=4096, t_max=1000.0, replicas=1, master_seed=0,
                                          observables=["current"]))
    grid = TimeGrid.geometric(cfg.grid.t0, cfg.grid.ratio, cfg.t_max)
    _write(out / "diffusivity.csv", ["t", "estimator_tag", "D", "stderr"],
           ([_fmt(t), "green_kubo", _fmt(amplitude * t**exponent), _fmt(0.0)] for t in grid))
    manifest = {"config": cfg.to_dict(), "code_version": "synthetic"}
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


__all__ = [
    "AnalysisConfig",
    "Claim",
    "RunData",
    "analyze_run",
    "load_run",
    "write_synthetic_fixture",
]
