"""Finite-range jump laws and the quadratic flux built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EmptyLawError,
    InvalidLawError,
    NegativeWeightError,
    NotNormalizedError,
    ZeroOffsetWeightError,
)

NORMALIZATION_TOL = 1e-9
MEAN_ZERO_TOL = 1e-12

FLUX_KINDS = ("literal", "transport")


@dataclass(frozen=True)
class JumpLaw:
    """Probability law p(z) of attempted jump offsets.

    ``offsets`` and ``probs`` are sorted by offset and contain only the
    support (strictly positive weights).
    """

    offsets: tuple[int, ...]
    probs: tuple[float, ...]
    drift: float = field(init=False)
    second_moment: float = field(init=False)
    range: int = field(init=False)

    def __post_init__(self) -> None:
        if len(self.offsets) != len(self.probs):
            raise InvalidLawError("offsets and probs differ in length")
        if not self.offsets:
            raise EmptyLawError("jump law has no support")
        object.__setattr__(self, "drift", math.fsum(z * p for z, p in zip(self.offsets, self.probs)))
        object.__setattr__(
            self, "second_moment", math.fsum(z * z * p for z, p in zip(self.offsets, self.probs))
        )
        object.__setattr__(self, "range", max(abs(z) for z in self.offsets))

    @property
    def mean_zero(self) -> bool:
        return abs(self.drift) <= MEAN_ZERO_TOL

    @property
    def is_tasep(self) -> bool:
        return self.offsets == (1,) and self.probs == (1.0,)

    @property
    def weights(self) -> dict[int, float]:
        return dict(zip(self.offsets, self.probs))

    def p(self, z: int) -> float:
        return self.weights.get(z, 0.0)

    @property
    def offsets_array(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=np.int64)

    @property
    def cumulative(self) -> np.ndarray:
        """Cumulative probabilities, last entry forced to exactly 1."""
        c = np.cumsum(np.asarray(self.probs, dtype=np.float64))
        c[-1] = 1.0
        return c

    def flux_coefficients(self, kind: str = "literal") -> dict[int, float]:
        """Coefficients c(z) of the flux w_0 = chi^-1 sum_z c(z) (eta_z - rho)(eta_0 - rho).

        ``literal`` uses c(z) = p(z). ``transport`` uses c(z) = z p(z), the
        quadratic part of the instantaneous particle current; both coincide
        for nearest-neighbour totally asymmetric laws.
        """
        if kind == "literal":
            return dict(self.weights)
        if kind == "transport":
            return {z: z * p for z, p in self.weights.items()}
        raise ValueError(f"unknown flux kind {kind!r}; expected one of {FLUX_KINDS}")

    def pair_coefficients(self, kind: str = "literal") -> np.ndarray:
        """Symmetrised flux coefficients indexed by distance d = 1..R.

        Entry ``d - 1`` holds c(d) + c(-d), the weight of the pair sum
        sum_x eta_x eta_{x+d} in the total flux.
        """
        c = self.flux_coefficients(kind)
        out = np.zeros(self.range, dtype=np.float64)
        for z, v in c.items():
            out[abs(z) - 1] += v
        return out

    def to_pairs(self) -> list[list[float]]:
        return [[z, p] for z, p in zip(self.offsets, self.probs)]

    def label(self) -> str:
        return ";".join(f"{z}:{p:.12g}" for z, p in zip(self.offsets, self.probs))

    def __repr__(self) -> str:
        return f"JumpLaw({self.label()})"


def build_jump_law(pairs: Iterable[tuple[int, float]] | Mapping[int, float]) -> JumpLaw:
    """Validate (offset, weight) pairs and return the corresponding law."""
    if isinstance(pairs, Mapping):
        items = list(pairs.items())
    else:
        items = [tuple(p) for p in pairs]
    if not items:
        raise EmptyLawError("jump law needs at least one (offset, weight) pair")
    seen: dict[int, float] = {}
    for z, w in items:
        if isinstance(z, float):
            if not z.is_integer():
                raise InvalidLawError(f"offset {z} is not an integer")
        z = int(z)
        w = float(w)
        if z in seen:
            raise InvalidLawError(f"offset {z} given twice")
        if not math.isfinite(w):
            raise InvalidLawError(f"weight for offset {z} is not finite")
        if w < 0:
            raise NegativeWeightError(f"p({z}) = {w} < 0")
        if z == 0 and w != 0:
            raise ZeroOffsetWeightError("p(0) must be absent or zero")
        seen[z] = w
    total = math.fsum(seen.values())
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalizedError(f"weights sum to {total!r}, not 1")
    support = sorted((z, w) for z, w in seen.items() if w > 0)
    if not support:
        raise EmptyLawError("jump law has no positive weight")
    return JumpLaw(tuple(z for z, _ in support), tuple(w for _, w in support))


def tasep() -> JumpLaw:
    return build_jump_law({1: 1.0})


def symmetric() -> JumpLaw:
    return build_jump_law({1: 0.5, -1: 0.5})
