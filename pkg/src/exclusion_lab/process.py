"""Exclusion dynamics on a periodic ring of L sites.

Typical use::

    law = build_jump_law({1: 1.0})
    rng = RngStream(master_seed=7, replica_id=0)
    config = sample_bernoulli_config(1024, 0.5, rng, law=law)
    hooks = CurrentAccumulators.attach(config, law, rho=0.5)
    advance(config, law, 10.0, rng, hooks)
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateDensityError, RingTooSmallError
from .law import JumpLaw


@dataclass
class RngStream:
    """Independent random stream for one replica.

    The generator is PCG64 seeded from
    ``SeedSequence(entropy=master_seed, spawn_key=(replica_id,))``; the
    seed-sequence hash is numpy's documented, platform-stable mixing
    function, so a (master_seed, replica_id) pair always yields the same bits.
    """

    master_seed: int
    replica_id: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.replica_id < 0:
            raise ValueError("replica_id must be non-negative")
        seq = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=(int(self.replica_id),))
        self.generator = np.random.Generator(np.random.PCG64(seq))


def light_cone_halfwidth(law: JumpLaw, t: float) -> float:
    """R t + 6 sqrt(sigma^2 t): reach of a single walker with overwhelming probability."""
    return law.range * t + 6.0 * math.sqrt(law.second_moment * t)


def minimum_ring(law: JumpLaw, t_max: float) -> int:
    """Smallest L whose two light cones of horizon t_max do not meet."""
    return int(math.ceil(2.0 * light_cone_halfwidth(law, t_max) + 2 * law.range))


def check_ring(L: int, law: JumpLaw, t_max: float, *, unsafe: bool = False) -> None:
    if L < 2 * law.range + 2:
        raise RingTooSmallError(f"L={L} is below 2R+2={2 * law.range + 2}")
    need = minimum_ring(law, t_max)
    if L < need:
        msg = f"L={L} is smaller than the light-cone requirement {need} for t_max={t_max}"
        if not unsafe:
            raise RingTooSmallError(msg)
        warnings.warn(msg + " (unsafe override)", stacklevel=2)


class RingConfig:
    """Occupancy of a ring with particle positions for O(1) uniform picks.

    ``occupancy`` is a uint8 0/1 array used by the compiled loops;
    :meth:`packed` gives the bit-packed form used for storage. A uint8
    array passed in is adopted without copying and mutated by the dynamics.
    """

    def __init__(self, occupancy: np.ndarray):
        occ = np.ascontiguousarray(occupancy, dtype=np.uint8)
        if occ.ndim != 1 or occ.size < 2:
            raise ValueError("occupancy must be a 1-d array with at least 2 sites")
        if np.any(occ > 1):
            raise ValueError("occupancy entries must be 0 or 1")
        self.occupancy = occ
        self.positions = np.flatnonzero(occ).astype(np.int64)
        self.slot = np.full(occ.size, -1, dtype=np.int64)
        self.slot[self.positions] = np.arange(self.positions.size)

    @property
    def L(self) -> int:
        return self.occupancy.size

    @property
    def count(self) -> int:
        return self.positions.size

    def packed(self) -> np.ndarray:
        return np.packbits(self.occupancy, bitorder="little")

    @classmethod
    def from_packed(cls, bits: np.ndarray, L: int) -> "RingConfig":
        return cls(np.unpackbits(np.asarray(bits, dtype=np.uint8), count=L, bitorder="little"))

    def is_consistent(self) -> bool:
        occ_pos = np.flatnonzero(self.occupancy)
        return (
            np.array_equal(np.sort(self.positions), occ_pos)
            and np.all(self.slot[self.positions] == np.arange(self.count))
            and int((self.slot >= 0).sum()) == self.count
        )

    def copy(self) -> "RingConfig":
        new = RingConfig.__new__(RingConfig)
        new.occupancy = self.occupancy.copy()
        new.positions = self.positions.copy()
        new.slot = self.slot.copy()
        return new


def sample_bernoulli_config(
    L: int, rho: float, rng: RngStream | np.random.Generator, *, law: JumpLaw | None = None
) -> RingConfig:
    """Independent Bernoulli(rho) occupancy on each of L sites."""
    if not 0.0 < rho < 1.0:
        raise DegenerateDensityError(f"rho={rho}: product measures at 0 and 1 are frozen")
    if law is not None and L < 2 * law.range + 2:
        raise RingTooSmallError(f"L={L} is below 2R+2={2 * law.range + 2}")
    gen = rng.generator if isinstance(rng, RngStream) else rng
    return RingConfig((gen.random(L) < rho).astype(np.uint8))


@dataclass
class CurrentAccumulators:
    """Running flux functionals updated by :func:`advance`.

    ``v_now`` is sum_x w_x(eta) for the current configuration and
    ``j_integral`` its time integral since attachment. ``bond_counts[x]`` is
    the net number of particles that crossed bond (x, x+1) rightward.
    """

    law: JumpLaw
    rho: float
    flux_kind: str
    clock: float
    v_now: float
    j_integral: float
    pairs: np.ndarray
    bond_counts: np.ndarray
    track_bonds: bool = True
    attempts: int = 0
    jumps: int = 0

    @classmethod
    def attach(
        cls,
        config: RingConfig,
        law: JumpLaw,
        rho: float,
        *,
        flux_kind: str = "transport",
        track_bonds: bool = True,
        clock: float = 0.0,
    ) -> "CurrentAccumulators":
        pairs = kernels.pair_counts(config.occupancy, law.range)
        acc = cls(
            law=law,
            rho=rho,
            flux_kind=flux_kind,
            clock=clock,
            v_now=0.0,
            j_integral=0.0,
            pairs=pairs,
            bond_counts=np.zeros(config.L if track_bonds else 1, dtype=np.int64),
            track_bonds=track_bonds,
        )
        acc.v_now = total_flux(config.occupancy, law, rho, flux_kind)
        return acc


def total_flux(occupancy: np.ndarray, law: JumpLaw, rho: float, kind: str = "transport") -> float:
    """sum_x w_x(eta) computed from scratch."""
    d = occupancy.astype(np.float64) - rho
    chi = rho * (1.0 - rho)
    total = 0.0
    for z, c in law.flux_coefficients(kind).items():
        total += c * float(np.dot(d, np.roll(d, -z)))
    return total / chi


def advance(
    config: RingConfig,
    law: JumpLaw,
    t_target: float,
    rng: RngStream | np.random.Generator,
    hooks: CurrentAccumulators | None = None,
) -> None:
    """Run the exclusion dynamics from ``hooks.clock`` (or 0) up to ``t_target``."""
    gen = rng.generator if isinstance(rng, RngStream) else rng
    if hooks is None:
        hooks = CurrentAccumulators.attach(config, law, 0.5, track_bonds=False)
    if t_target < hooks.clock:
        raise ValueError(f"t_target={t_target} precedes the current clock {hooks.clock}")
    fstate = np.array([hooks.clock, hooks.v_now, hooks.j_integral])
    counters = np.zeros(2, dtype=np.int64)
    kernels.advance_kernel(
        config.occupancy,
        config.positions,
        config.slot,
        hooks.pairs,
        hooks.bond_counts,
        fstate,
        counters,
        law.offsets_array,
        law.cumulative,
        law.pair_coefficients(hooks.flux_kind),
        1.0 / (hooks.rho * (1.0 - hooks.rho)),
        float(t_target),
        gen,
        hooks.track_bonds,
    )
    hooks.clock, hooks.v_now, hooks.j_integral = (float(v) for v in fstate)
    hooks.attempts += int(counters[0])
    hooks.jumps += int(counters[1])


@dataclass
class SecondClassState:
    """First-class background plus one second-class particle at ``x_wrapped``."""

    background: RingConfig
    x_wrapped: int
    x_unwrapped: int = 0
    clock: float = 0.0
    attempts: int = 0
    jumps: int = 0

    def __post_init__(self) -> None:
        if self.background.occupancy[self.x_wrapped]:
            raise ValueError("second-class site must be empty of first-class particles")

    @classmethod
    def sample(
        cls, L: int, rho: float, rng: RngStream | np.random.Generator, *, law: JumpLaw | None = None
    ) -> "SecondClassState":
        """Bernoulli(rho) background away from site 0; the second-class particle sits at 0."""
        cfg = sample_bernoulli_config(L, rho, rng, law=law)
        occ = cfg.occupancy
        occ[0] = 0
        return cls(RingConfig(occ), 0, 0)

    def is_consistent(self) -> bool:
        L = self.background.L
        return self.background.occupancy[self.x_wrapped] == 0 and self.x_unwrapped % L == self.x_wrapped


def advance_with_second_class(
    state: SecondClassState, law: JumpLaw, t_target: float, rng: RngStream | np.random.Generator
) -> None:
    gen = rng.generator if isinstance(rng, RngStream) else rng
    if t_target < state.clock:
        raise ValueError(f"t_target={t_target} precedes the current clock {state.clock}")
    bg = state.background
    xstate = np.array([state.x_wrapped, state.x_unwrapped], dtype=np.int64)
    fclock = np.array([state.clock])
    counters = np.zeros(2, dtype=np.int64)
    kernels.second_class_kernel(
        bg.occupancy,
        bg.positions,
        bg.slot,
        xstate,
        fclock,
        counters,
        law.offsets_array,
        law.cumulative,
        float(t_target),
        gen,
    )
    state.x_wrapped = int(xstate[0])
    state.x_unwrapped = int(xstate[1])
    state.clock = float(fclock[0])
    state.attempts += int(counters[0])
    state.jumps += int(counters[1])
