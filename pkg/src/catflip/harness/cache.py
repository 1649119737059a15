"""Disk cache for spectral decompositions.

Keyed on an exact hash of the model parameters, Hilbert-space dims, and
solver settings, so a 1e-9 parameter nudge is a different entry. Bumping
CACHE_VERSION changes every key, which orphans (and thereby invalidates)
old entries. Corrupt entries are recomputed with a warning.
"""
from __future__ import annotations

import os
import warnings
from pathlib import Path

from ..liouville import SpectralDecomposition, build_liouvillian, spectrum
from ..models import ModelSpec
from .config import config_hash

CACHE_VERSION = 1


class CacheCorruption(UserWarning):
    pass


def spectral_key(model: ModelSpec, count=None, method: str = "auto") -> str:
    payload = {
        "cache_version": CACHE_VERSION,
        "meta": model.meta,
        "dims": list(model.space.mode_dims),
        "count": count,
        "method": method,
    }
    return config_hash(payload)


class SpectralCache:
    """get-or-compute store of SpectralDecomposition files."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.spec"

    def get_or_compute(self, model: ModelSpec, count=None, method: str = "auto",
                       memory_budget_mb: float = 2048.0) -> SpectralDecomposition:
        key = spectral_key(model, count=count, method=method)
        path = self._path(key)
        if path.exists():
            try:
                decomp = SpectralDecomposition.load(path)
            except Exception as exc:
                warnings.warn(
                    f"cache entry {path.name} unreadable ({exc}); recomputing",
                    CacheCorruption)
            else:
                self.hits += 1
                return decomp
        self.misses += 1
        liouv = build_liouvillian(model, memory_budget_mb=memory_budget_mb)
        decomp = spectrum(liouv, count=count, method=method)
        tmp = path.with_suffix(".tmp")
        decomp.save(tmp)
        os.replace(tmp, path)
        return decomp

    def entries(self) -> list:
        return sorted(p.name for p in self.directory.glob("*.spec"))

    def clear(self) -> int:
        n = 0
        for p in self.directory.glob("*.spec"):
            p.unlink()
            n += 1
        return n


def cache_get_or_compute(model: ModelSpec, directory, count=None,
                         method: str = "auto") -> SpectralDecomposition:
    return SpectralCache(directory).get_or_compute(model, count=count, method=method)
