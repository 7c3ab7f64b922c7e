"""Per-replica simulation driver and the trace it produces."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .law import JumpLaw
from .process import (
    CurrentAccumulators,
    RngStream,
    SecondClassState,
    advance,
    advance_with_second_class,
    sample_bernoulli_config,
)

OBSERVABLES = ("two_point", "current", "second_class", "height")


@dataclass(frozen=True)
class SimulationPlan:
    """Everything a replica needs besides its seed."""

    law: JumpLaw
    L: int
    rho: float
    times: tuple[float, ...]  # record times, first entry must be 0
    observables: frozenset[str] = frozenset(OBSERVABLES)
    flux_kind: str = "transport"

    def __post_init__(self) -> None:
        if not self.times or self.times[0] != 0.0:
            raise ValueError("record times must start at 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("record times must be strictly increasing")
        unknown = set(self.observables) - set(OBSERVABLES)
        if unknown:
            raise ValueError(f"unknown observables {sorted(unknown)}")

    @property
    def needs_first_class(self) -> bool:
        return bool({"two_point", "current", "height"} & self.observables)


@dataclass
class ReplicaTrace:
    replica_id: int
    times: np.ndarray
    n_particles: int
    occupancy: np.ndarray | None = None  # (K, L) uint8
    j_integral: np.ndarray | None = None  # (K,)
    v_final: float | None = None
    bond_counts: np.ndarray | None = None  # (K, L) int32
    x_unwrapped: np.ndarray | None = None  # (K,)
    x_wrapped: np.ndarray | None = None  # (K,)
    attempts: int = 0
    jumps: int = 0
    extra: dict = field(default_factory=dict)

    def index_of(self, t: float) -> int | None:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12, atol=0.0))
        return int(hits[0]) if hits.size else None

    def rows(self) -> Iterable[tuple[float, str, float]]:
        """Flat (time, observable id, value) rows."""
        for k, t in enumerate(self.times):
            if self.occupancy is not None:
                for x, v in enumerate(self.occupancy[k]):
                    yield (float(t), f"occ:{x}", int(v))
            if self.j_integral is not None:
                yield (float(t), "j_integral", float(self.j_integral[k]))
            if self.bond_counts is not None:
                for x, v in enumerate(self.bond_counts[k]):
                    yield (float(t), f"bond:{x}", int(v))
            if self.x_unwrapped is not None:
                yield (float(t), "x_unwrapped", int(self.x_unwrapped[k]))


def write_trace_csv(trace: ReplicaTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "observable", "value"])
        w.writerow([0.0, "meta:replica_id", trace.replica_id])
        w.writerow([0.0, "meta:n_particles", trace.n_particles])
        for t, name, v in trace.rows():
            w.writerow([repr(t), name, repr(v)])


def read_trace_csv(path: str | Path) -> ReplicaTrace:
    meta: dict[str, int] = {}
    times: list[float] = []
    data: dict[str, dict[float, dict[int, float]]] = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for t_s, name, v_s in r:
            t = float(t_s)
            if name.startswith("meta:"):
                meta[name[5:]] = int(v_s)
                continue
            if not times or times[-1] != t:
                if t not in times:
                    times.append(t)
            key, _, idx = name.partition(":")
            data.setdefault(key, {}).setdefault(t, {})[int(idx) if idx else 0] = float(v_s)
    K = len(times)

    def grid(key: str, dtype) -> np.ndarray | None:
        if key not in data:
            return None
        width = max(max(d) for d in data[key].values()) + 1
        out = np.zeros((K, width), dtype=dtype)
        for k, t in enumerate(times):
            for i, v in data[key][t].items():
                out[k, i] = v
        return out

    occ = grid("occ", np.uint8)
    bonds = grid("bond", np.int32)
    j = grid("j_integral", np.float64)
    x = grid("x_unwrapped", np.int64)
    return ReplicaTrace(
        replica_id=meta.get("replica_id", 0),
        times=np.asarray(times),
        n_particles=meta.get("n_particles", 0),
        occupancy=occ,
        j_integral=None if j is None else j[:, 0],
        bond_counts=bonds,
        x_unwrapped=None if x is None else x[:, 0],
    )


def simulate_replica(plan: SimulationPlan, master_seed: int, replica_id: int) -> ReplicaTrace:
    """One stationary replica: Bernoulli start, then record at every plan time.

    The first-class run and the second-class run draw from the same stream,
    in that order, so they use independent initial conditions.
    """
    rng = RngStream(master_seed, replica_id)
    gen = rng.generator
    times = np.asarray(plan.times, dtype=np.float64)
    K = times.size
    obs = plan.observables
    trace = ReplicaTrace(replica_id=replica_id, times=times, n_particles=0)

    if plan.needs_first_class:
        cfg = sample_bernoulli_config(plan.L, plan.rho, gen, law=plan.law)
        trace.n_particles = cfg.count
        track_bonds = "height" in obs
        hooks = CurrentAccumulators.attach(cfg, plan.law, plan.rho, flux_kind=plan.flux_kind, track_bonds=track_bonds)
        keep_occ = "two_point" in obs or "height" in obs
        occ = np.empty((K, plan.L), dtype=np.uint8) if keep_occ else None
        j = np.empty(K)
        bonds = np.empty((K, plan.L), dtype=np.int32) if track_bonds else None
        for k, t in enumerate(times):
            if t > hooks.clock:
                advance(cfg, plan.law, float(t), gen, hooks)
            if occ is not None:
                occ[k] = cfg.occupancy
            j[k] = hooks.j_integral
            if bonds is not None:
                bonds[k] = hooks.bond_counts
        trace.occupancy = occ
        trace.j_integral = j if "current" in obs else None
        trace.v_final = hooks.v_now
        trace.bond_counts = bonds
        trace.attempts += hooks.attempts
        trace.jumps += hooks.jumps

    if "second_class" in obs:
        state = SecondClassState.sample(plan.L, plan.rho, gen, law=plan.law)
        xu = np.empty(K, dtype=np.int64)
        xw = np.empty(K, dtype=np.int64)
        for k, t in enumerate(times):
            if t > state.clock:
                advance_with_second_class(state, plan.law, float(t), gen)
            xu[k] = state.x_unwrapped
            xw[k] = state.x_wrapped
        trace.x_unwrapped = xu
        trace.x_wrapped = xw
        trace.attempts += state.attempts
        trace.jumps += state.jumps
    return trace


def simulate_replicas(plan: SimulationPlan, master_seed: int, replica_ids: Sequence[int]) -> list[ReplicaTrace]:
    return [simulate_replica(plan, master_seed, r) for r in replica_ids]
