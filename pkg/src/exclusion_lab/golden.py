"""Golden oracle files: exact small-ring values in one long-format CSV."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .errors import WrapDominatedError
from .law import JumpLaw
from .oracle import (
    build_oracle,
    check_current_bound,
    exact_diffusivity,
    exact_h1_norm,
    exact_inner_product,
    exact_integrated_current_norm,
    exact_two_point,
    flux_function,
)

GOLDEN_HEADER = ["law_id", "L", "rho", "t_or_lambda", "quantity", "value"]


def golden_rows(law: JumpLaw, L: int, rho: float, t_grid: Sequence[float], lambda_grid: Sequence[float]) -> list[list]:
    """Exact S(x, t), D(t), integrated current norms, H_{-1} norms and inequality rows.

    Quantities: ``S:x`` (x = 0..L-1), ``D`` (omitted when the antipodal band
    carries too much mass), ``D_green_kubo_ring`` (sigma^2 plus the ring
    current-norm term, transport flux), ``current_norm`` (literal flux),
    ``h1_literal``/``h1_transport`` and ``lambda_h1_literal`` (tends to
    <<w, w>> as lambda grows), ``bound_lhs``/``bound_rhs``/``bound_ratio``,
    and ``ww_literal`` once per file with t_or_lambda = 0.
    """
    model = build_oracle(law, L, rho)
    lid = law.label()
    rows: list[list] = []

    def add(x: float, q: str, v: float) -> None:
        rows.append([lid, L, repr(float(rho)), repr(float(x)), q, repr(float(v))])

    w = flux_function(model, "literal")
    add(0.0, "ww_literal", exact_inner_product(model, w, w))
    for t in t_grid:
        s = exact_two_point(model, t)
        for x, v in enumerate(s):
            add(t, f"S:{x}", v)
        if t > 0:
            try:
                add(t, "D", exact_diffusivity(model, t))
            except WrapDominatedError:
                pass
            add(t, "D_green_kubo_ring", law.second_moment + model.chi * exact_integrated_current_norm(model, t, "transport"))
            add(t, "current_norm", exact_integrated_current_norm(model, t, "literal"))
    bound_t = [t for t in t_grid if t > 0]
    if bound_t:
        for r in check_current_bound(model, bound_t).rows:
            add(r.t, "bound_lhs", r.lhs)
            add(r.t, "bound_rhs", r.rhs)
            add(r.t, "bound_ratio", r.ratio)
    for lam in lambda_grid:
        h = exact_h1_norm(model, lam, "literal")
        add(lam, "h1_literal", h)
        add(lam, "lambda_h1_literal", lam * h)
        add(lam, "h1_transport", exact_h1_norm(model, lam, "transport"))
    return rows


def write_golden(path: str | Path, rows: list[list]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(GOLDEN_HEADER)
        wr.writerows(rows)
    return p


def read_golden(path: str | Path) -> dict[tuple[float, str], float]:
    with open(path, newline="") as fh:
        return {(float(r["t_or_lambda"]), r["quantity"]): float(r["value"]) for r in csv.DictReader(fh)}
