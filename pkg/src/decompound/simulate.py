"""Sample-path and increment simulation for compound Poisson models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import CppModel


@dataclass(frozen=True)
class SamplePath:
    """Jump record of one path on [0, horizon]: strictly increasing times."""

    horizon: float
    jump_times: np.ndarray   # (n_jumps,)
    jump_values: np.ndarray  # (n_jumps, d)

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float)
        v = np.atleast_2d(np.asarray(self.jump_values, dtype=float))
        if t.size == 0:
            v = v.reshape(0, v.shape[-1] if v.size else 1)
        if t.size != v.shape[0]:
            raise ValueError("jump_times and jump_values must have equal length")
        if t.size and (np.any(t <= 0) or np.any(t > self.horizon) or np.any(np.diff(t) <= 0)):
            raise ValueError("jump times must be strictly increasing in (0, horizon]")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "jump_values", v)

    @property
    def n_jumps(self) -> int:
        return self.jump_times.size

    def state_at(self, t: float) -> np.ndarray:
        keep = self.jump_times <= t
        return self.jump_values[keep].sum(axis=0)


@dataclass(frozen=True)
class IncrementSample:
    """Observed increments z_i on a fixed sampling mesh.

    n = 0 is allowed so that posterior code can run in prior-reproduction
    mode on an empty data file; simulation always produces n >= 1.
    """

    dim: int
    mesh: float
    z: np.ndarray  # (n, dim)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1, self.dim)
        if self.mesh <= 0:
            raise ValueError("mesh must be positive")
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def zero_mask(self) -> np.ndarray:
        """Increments that are bitwise exactly zero (atom of the increment law)."""
        return np.all(self.z == 0.0, axis=1)


def simulate_path(model: CppModel, horizon: float, rng: np.random.Generator) -> SamplePath:
    """One path: Poisson(lambda * horizon) jumps at sorted uniform times."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n_jumps = int(rng.poisson(model.lambda_ * horizon))
    # uniform on (0, horizon]: flip [0, 1) draws so 0 is excluded
    times = np.sort(horizon * (1.0 - rng.random(n_jumps)))
    values = model.jumps.sample(rng, size=n_jumps) if n_jumps else \
        np.zeros((0, model.dim))
    return SamplePath(horizon, times, values)


def simulate_increments(model: CppModel, n: int, mesh: float,
                        rng: np.random.Generator) -> IncrementSample:
    """n i.i.d. increments, each a Poisson(lambda * mesh) sum of jumps.

    Increments whose latent jump count is zero are stored as exact zero
    vectors, so the atom of the increment law is detectable downstream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mesh <= 0:
        raise ValueError("mesh must be positive")
    counts = rng.poisson(model.lambda_ * mesh, size=n)
    total = int(counts.sum())
    z = np.zeros((n, model.dim))
    if total:
        draws = model.jumps.sample(rng, size=total)
        owner = np.repeat(np.arange(n), counts)
        np.add.at(z, owner, draws)
    return IncrementSample(model.dim, mesh, z)


def path_increments(path: SamplePath, mesh: float) -> IncrementSample:
    """Increments of a path read off on the mesh grid (exact zeros preserved)."""
    n = int(np.floor(path.horizon / mesh + 1e-12))
    if n < 1:
        raise ValueError("horizon shorter than one mesh interval")
    d = path.jump_values.shape[1]
    z = np.zeros((n, d))
    if path.n_jumps:
        # jump at time t belongs to interval (i*mesh, (i+1)*mesh]
        idx = np.ceil(path.jump_times / mesh).astype(int) - 1
        keep = idx < n
        np.add.at(z, idx[keep], path.jump_values[keep])
    return IncrementSample(d, mesh, z)


# ----------------------------------------------------------------------
# on-disk format: CSV of increments + JSON sidecar with provenance
# ----------------------------------------------------------------------

def write_increments_csv(sample: IncrementSample, path, sidecar: Optional[dict] = None) -> None:
    header = ",".join(f"z{a + 1}" for a in range(sample.dim))
    np.savetxt(path, sample.z, fmt="%.17g", delimiter=",", header=header, comments="")
    if sidecar is not None:
        meta = dict(sidecar)
        meta.setdefault("mesh", sample.mesh)
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)


def read_increments_csv(path, mesh: Optional[float] = None) -> IncrementSample:
    """Read increments; mesh comes from the sidecar unless given explicitly."""
    with open(path) as fh:
        header = fh.readline().strip()
    dim = len(header.split(","))
    z = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = {}
    if mesh is None:
        try:
            with open(str(path) + ".json") as fh:
                meta = json.load(fh)
            mesh = float(meta.get("mesh", 1.0))
        except FileNotFoundError:
            mesh = 1.0
    return IncrementSample(dim, mesh, z.reshape(-1, dim), meta=meta)
