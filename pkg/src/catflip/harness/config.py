"""Run configuration, hashing, and manifest plumbing.

Configs are plain JSON-compatible dicts wrapped in small dataclasses. The
config hash is a sha256 over a canonical JSON encoding, so any parameter
change (down to the last float bit) yields a distinct key, and reruns of an
identical config are byte-identical apart from the timestamp line.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1

FAMILIES = ("single-mode", "two-mode", "effective-operator")


def _jsonable(obj: Any) -> Any:
    """Map values to JSON-compatible types with exact float round trips."""
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    if hasattr(obj, "item"):  # numpy scalar
        return _jsonable(obj.item())
    raise TypeError(f"cannot encode {type(obj).__name__} in a config")


def canonical_json(obj: Any) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: a model family, base parameters, and a drive grid.

    `grid` is interpreted by `variable`: either bare drive amplitudes
    ("eps_2", rad/us, single-mode or effective families) or target mean
    photon numbers ("nbar", any family). Grids must be nonempty and
    strictly monotone. Results are always reported against the steady
    memory photon number, not the drive.
    """

    family: str
    params: dict = field(default_factory=dict)
    variable: str = "nbar"
    grid: tuple = ()
    cutoff_max: int = 14
    buffer_cutoff_max: int = 4
    gauge: str = "imag"
    method: str = "auto"
    outputs: tuple = ("gap",)
    memory_budget_mb: float = 2048.0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.variable not in ("eps_2", "nbar"):
            raise ConfigError(f"unknown sweep variable {self.variable!r}")
        g = tuple(float(x) for x in self.grid)
        if not g:
            raise ConfigError("sweep grid is empty")
        steps = [b - a for a, b in zip(g, g[1:])]
        if steps and not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
            raise ConfigError("sweep grid must be strictly monotone")
        object.__setattr__(self, "grid", g)
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"config schema {self.schema_version} != {SCHEMA_VERSION}")

    def to_dict(self) -> dict:
        return _jsonable(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        for key in ("grid", "outputs"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        return cls(**d)

    def hash(self) -> str:
        return config_hash(self)


def load_config(path) -> SweepConfig:
    with open(path) as fh:
        return SweepConfig.from_dict(json.load(fh))


def save_config(cfg: SweepConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def csv_header(kind: str, cfg_hash: str, master_seed: int, columns: list,
               timestamp: float | None = None) -> str:
    """Standard header block for emitted CSV files.

    All lines are deterministic for a given config except `generated`,
    which carries the wall-clock timestamp.
    """
    ts = time.time() if timestamp is None else timestamp
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(ts))
    return (
        f"# catflip {kind} schema={SCHEMA_VERSION}\n"
        f"# config_hash={cfg_hash} master_seed={master_seed}\n"
        f"# generated={stamp}\n"
        f"# columns: {','.join(columns)}\n"
    )


@dataclass
class RunManifest:
    """Record of one harness invocation: what ran and where it landed."""

    config_hash: str
    master_seed: int
    code_version: str
    created: str
    outputs: dict = field(default_factory=dict)

    @classmethod
    def new(cls, cfg_hash: str, master_seed: int) -> "RunManifest":
        from .. import __version__
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
        return cls(config_hash=cfg_hash, master_seed=master_seed,
                   code_version=__version__, created=stamp)

    def add(self, name: str, path) -> None:
        self.outputs[name] = str(path)

    def write(self, path) -> None:
        Path(path).write_text(
            json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self) -> list:
        """Check that every listed output exists and carries the hash.

        Returns a list of problem strings, empty when clean.
        """
        problems = []
        for name, p in sorted(self.outputs.items()):
            path = Path(p)
            if not path.exists():
                problems.append(f"{name}: missing file {p}")
                continue
            head = path.read_text(errors="replace")[:4096]
            if self.config_hash not in head:
                problems.append(f"{name}: header lacks config hash")
        return problems
