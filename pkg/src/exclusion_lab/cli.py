"""Command-line entry point: ``exclusion-lab simulate | oracle | analyze | validate``.

Exit codes: 0 success, 1 runtime error, 2 configuration or input error,
3 validation failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .errors import ConfigInvalidError, ExclusionLabError, InvalidLawError, MissingInputError, TooLargeError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_VALIDATION = 0, 1, 2, 3


def _fail(msg: str, code: int) -> None:
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _parse_law(text: str):
    from .law import build_jump_law

    pairs = []
    for item in text.split(","):
        z, _, w = item.partition(":")
        try:
            pairs.append((int(z), float(w)))
        except ValueError:
            raise click.BadParameter(f"expected offset:weight pairs, got {item!r}") from None
    return build_jump_law(pairs)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}") from None


@click.group()
@click.version_option(package_name="artifact")
def main() -> None:
    """Finite-range exclusion process laboratory."""


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True, help="JSON experiment config.")
@click.option("--seed", type=int, default=None, help="Override master_seed.")
@click.option("--workers", type=int, default=None, help="Worker processes (default: config, then $EXCLUSION_LAB_WORKERS).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Override out_dir.")
def simulate(config_path: str, seed: int | None, workers: int | None, out_dir: str | None) -> None:
    """Run the replicas of a config and write estimator CSVs plus the manifest."""
    from .config import ExperimentConfig
    from .runner import run_experiment, write_outputs

    try:
        cfg = ExperimentConfig.load(config_path)
        changes = {}
        if seed is not None:
            changes["master_seed"] = seed
        if out_dir is not None:
            changes["out_dir"] = out_dir
        if changes:
            cfg = cfg.replace(**changes)
        if workers is not None and workers < 1:
            raise ConfigInvalidError("--workers must be positive")
    except ConfigInvalidError as exc:
        _fail(str(exc), EXIT_CONFIG)
    try:
        run = run_experiment(cfg, workers=workers)
        out = write_outputs(run, cfg.out_dir)
    except ExclusionLabError as exc:
        _fail(str(exc), EXIT_ERROR)
    click.echo(f"wrote {out} ({run.replicas} replicas, {run.wall_clock:.1f} s, {run.workers} workers)")


@main.command()
@click.option("--law", "law_text", required=True, help="Jump law as offset:weight pairs, e.g. '1:0.75,-1:0.25'.")
@click.option("--L", "L", type=int, required=True, help="Ring size (at most 12).")
@click.option("--rho", type=float, required=True)
@click.option("--t-grid", default="0,0.5,1,2", help="Comma-separated times.")
@click.option("--lambda-grid", default="1,0.5", help="Comma-separated resolvent parameters.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default="golden.csv")
def oracle(law_text: str, L: int, rho: float, t_grid: str, lambda_grid: str, out_path: str) -> None:
    """Write exact small-ring values (two-point function, D, H_-1 norms, inequality rows)."""
    from .golden import golden_rows, write_golden

    try:
        law = _parse_law(law_text)
        rows = golden_rows(law, L, rho, _floats(t_grid), _floats(lambda_grid))
    except (InvalidLawError, TooLargeError, click.BadParameter) as exc:
        _fail(str(exc), EXIT_CONFIG)
    except ExclusionLabError as exc:
        _fail(str(exc), EXIT_ERROR)
    click.echo(f"wrote {write_golden(out_path, rows)} ({len(rows)} rows)")


@main.command()
@click.argument("input_dir", type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON analysis config.")
@click.option("--compare", "compare_dir", type=click.Path(file_okay=False), default=None,
              help="Second run directory for the two-law comparison.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory (default: input).")
def analyze(input_dir: str, config_path: str | None, compare_dir: str | None, out_dir: str | None) -> None:
    """Fit exponents, build Laplace and H_-1 profiles and write summary.md."""
    from .analysis import AnalysisConfig, analyze_run

    try:
        claims = analyze_run(input_dir, out_dir, AnalysisConfig.load(config_path), compare_dir)
    except (ConfigInvalidError, MissingInputError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    except ExclusionLabError as exc:
        _fail(str(exc), EXIT_ERROR)
    for c in claims:
        click.echo(f"[{c.status}] {c.description}: {c.measured} (target {c.target})")


@main.command()
@click.option("--scale", type=click.Choice(["quick", "full"]), default="quick")
@click.option("--workers", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", help="Where acceptance_report.md goes.")
@click.option("--inject-fault", type=click.Choice(["wrap-off-by-one"]), default=None, hidden=True)
def validate(scale: str, workers: int | None, out_dir: str, inject_fault: str | None) -> None:
    """Run the acceptance suite (quick: a few minutes; full: about 20 minutes on one core)."""
    from .acceptance import injected_fault, run_suite, write_report

    if inject_fault is not None:
        workers = 1  # the patch lives in this process only
    with injected_fault(inject_fault):
        results = run_suite(scale, workers=workers)
    for r in results:
        click.echo(r.line())
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    report = write_report(results, Path(out_dir) / "acceptance_report.md")
    click.echo(f"wrote {report}")
    if not all(r.passed for r in results):
        sys.exit(EXIT_VALIDATION)


if __name__ == "__main__":
    main()
