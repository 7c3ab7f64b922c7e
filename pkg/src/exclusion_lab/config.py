"""Experiment configuration and run manifest.

A configuration is one JSON object with snake_case keys::

    {
      "law": [[1, 1.0]],
      "rho": 0.5,
      "L": 1024,
      "t_max": 100.0,
      "grid": {"t0": 1.0, "ratio": 1.4142135623730951},
      "replicas": 1000,
      "master_seed": 20261015,
      "observables": ["current", "height", "second_class", "two_point"],
      "out_dir": "runs/tasep",
      "workers": "auto",
      "unsafe_ring": false,
      "batches": 20
    }

Only ``law``, ``rho``, ``L``, ``t_max``, ``replicas`` and ``master_seed``
are required. Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigInvalidError, ExclusionLabError, RingTooSmallError
from .law import JumpLaw, build_jump_law
from .process import check_ring
from .trace import OBSERVABLES

WORKERS_ENV = "EXCLUSION_LAB_WORKERS"
DEFAULT_BATCHES = 20


@dataclass(frozen=True)
class GridSpec:
    t0: float = 1.0
    ratio: float = 2.0**0.5


_TOP_KEYS = {
    "law",
    "rho",
    "L",
    "t_max",
    "grid",
    "replicas",
    "master_seed",
    "observables",
    "out_dir",
    "workers",
    "unsafe_ring",
    "batches",
}
_REQUIRED = {"law", "rho", "L", "t_max", "replicas", "master_seed"}
_GRID_KEYS = {"t0", "ratio"}


def _number(d: dict, key: str, kind=float) -> Any:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalidError(f"{key} must be a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigInvalidError(f"{key} must be an integer, got {v!r}")
        return int(v)
    return float(v)


@dataclass(frozen=True)
class ExperimentConfig:
    law_pairs: tuple[tuple[int, float], ...]
    rho: float
    L: int
    t_max: float
    replicas: int
    master_seed: int
    grid: GridSpec = GridSpec()
    observables: tuple[str, ...] = tuple(sorted(OBSERVABLES))
    out_dir: str = "runs/default"
    workers: int | str = "auto"
    unsafe_ring: bool = False
    batches: int = DEFAULT_BATCHES
    law: JumpLaw = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        try:
            law = build_jump_law(self.law_pairs)
        except ExclusionLabError as exc:
            raise ConfigInvalidError(f"law: {exc}") from exc
        object.__setattr__(self, "law", law)
        if not 0.0 < self.rho < 1.0:
            raise ConfigInvalidError(f"rho must lie in (0, 1), got {self.rho}")
        if self.replicas < 1:
            raise ConfigInvalidError("replicas must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigInvalidError("master_seed must be an unsigned 64-bit integer")
        if not self.t_max > 0:
            raise ConfigInvalidError("t_max must be positive")
        if not (self.grid.t0 > 0 and self.grid.ratio > 1 and self.grid.t0 <= self.t_max):
            raise ConfigInvalidError("grid needs 0 < t0 <= t_max and ratio > 1")
        unknown = set(self.observables) - set(OBSERVABLES)
        if unknown or not self.observables:
            raise ConfigInvalidError(f"observables must be a non-empty subset of {OBSERVABLES}")
        if "height" in self.observables and not law.is_tasep:
            raise ConfigInvalidError("the height observable requires the TASEP law {1: 1.0}")
        if self.workers != "auto" and (not isinstance(self.workers, int) or self.workers < 1):
            raise ConfigInvalidError("workers must be a positive integer or 'auto'")
        if self.batches < 1:
            raise ConfigInvalidError("batches must be positive")
        try:
            check_ring(self.L, law, self.t_max, unsafe=True) if self.unsafe_ring else check_ring(self.L, law, self.t_max)
        except RingTooSmallError as exc:
            raise ConfigInvalidError(str(exc)) from exc

    # -- (de)serialization ------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigInvalidError("configuration must be a JSON object")
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigInvalidError(f"unknown configuration keys: {sorted(unknown)}")
        missing = _REQUIRED - set(data)
        if missing:
            raise ConfigInvalidError(f"missing configuration keys: {sorted(missing)}")
        law = data["law"]
        if isinstance(law, dict):
            try:
                law = [[int(k), v] for k, v in law.items()]
            except ValueError as exc:
                raise ConfigInvalidError(f"law offsets must be integers: {exc}") from exc
        if not isinstance(law, list) or not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in law):
            raise ConfigInvalidError("law must be a list of [offset, weight] pairs")
        pairs = []
        for z, w in law:
            if isinstance(z, bool) or not isinstance(z, int) or isinstance(w, bool) or not isinstance(w, (int, float)):
                raise ConfigInvalidError(f"bad law pair {[z, w]!r}")
            pairs.append((int(z), float(w)))
        grid = data.get("grid", {})
        if not isinstance(grid, dict):
            raise ConfigInvalidError("grid must be an object with t0 and ratio")
        if set(grid) - _GRID_KEYS:
            raise ConfigInvalidError(f"unknown grid keys: {sorted(set(grid) - _GRID_KEYS)}")
        gspec = GridSpec(
            t0=_number(grid, "t0") if "t0" in grid else GridSpec.t0,
            ratio=_number(grid, "ratio") if "ratio" in grid else GridSpec.ratio,
        )
        obs = data.get("observables", list(OBSERVABLES))
        if not isinstance(obs, list) or not all(isinstance(o, str) for o in obs):
            raise ConfigInvalidError("observables must be a list of names")
        workers = data.get("workers", "auto")
        if isinstance(workers, bool) or not (workers == "auto" or isinstance(workers, int)):
            raise ConfigInvalidError("workers must be a positive integer or 'auto'")
        unsafe = data.get("unsafe_ring", False)
        if not isinstance(unsafe, bool):
            raise ConfigInvalidError("unsafe_ring must be true or false")
        out_dir = data.get("out_dir", "runs/default")
        if not isinstance(out_dir, str):
            raise ConfigInvalidError("out_dir must be a string")
        return cls(
            law_pairs=tuple(pairs),
            rho=_number(data, "rho"),
            L=_number(data, "L", int),
            t_max=_number(data, "t_max"),
            replicas=_number(data, "replicas", int),
            master_seed=_number(data, "master_seed", int),
            grid=gspec,
            observables=tuple(sorted(set(obs))),
            out_dir=out_dir,
            workers=workers,
            unsafe_ring=unsafe,
            batches=_number(data, "batches", int) if "batches" in data else DEFAULT_BATCHES,
        )

    def to_dict(self) -> dict:
        return {
            "law": [[z, w] for z, w in self.law_pairs],
            "rho": self.rho,
            "L": self.L,
            "t_max": self.t_max,
            "grid": {"t0": self.grid.t0, "ratio": self.grid.ratio},
            "replicas": self.replicas,
            "master_seed": self.master_seed,
            "observables": list(self.observables),
            "out_dir": self.out_dir,
            "workers": self.workers,
            "unsafe_ring": self.unsafe_ring,
            "batches": self.batches,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalidError(f"invalid JSON: {exc}") from exc
        # A run manifest is accepted in place of a configuration.
        if isinstance(data, dict) and "config" in data and "code_version" in data:
            data = data["config"]
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigInvalidError(f"cannot read {path}: {exc}") from exc
        return cls.from_json(text)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def resolved_workers(self, override: int | None = None) -> int:
        """Flag, then an explicit config value, then the environment, then the CPU count."""
        if override is not None:
            return max(1, int(override))
        if self.workers != "auto":
            return int(self.workers)
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError as exc:
                raise ConfigInvalidError(f"{WORKERS_ENV}={env!r} is not an integer") from exc
        return os.cpu_count() or 1


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    from . import __version__

    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:16]}"


def replica_seed_digest(master_seed: int, replica_id: int) -> str:
    """First 128 bits of the stream's seed state, for the manifest."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replica_id),))
    return "".join(f"{w:016x}" for w in seq.generate_state(2, dtype=np.uint64))


@dataclass
class RunManifest:
    config: dict
    code_version: str
    seed_derivation: str
    replica_seeds: list[str]
    batches: list[list[int]]
    wall_clock_seconds: float
    workers: int
    event_counts: dict
    unsafe_ring: bool
    environment: dict = field(default_factory=dict)

    # Fields that legitimately differ between reruns of the same config;
    # the output directory inside ``config`` is dropped as well.
    VOLATILE = ("wall_clock_seconds", "workers", "environment")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def reproducible_part(self) -> dict:
        d = asdict(self)
        for k in self.VOLATILE:
            d.pop(k)
        d["config"] = {k: v for k, v in d["config"].items() if k != "out_dir"}
        return d


def environment_info() -> dict:
    import numba
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "platform": platform.platform(),
    }
