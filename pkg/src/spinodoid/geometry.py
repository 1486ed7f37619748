"""Spinodoid geometry synthesis.

A structure is the level set of an anisotropic Gaussian random field built
from superimposed cosine waves whose directions are confined to spherical
caps around the coordinate axes. Voxelizing the indicator function on a
periodic cubic cell yields the two-phase geometry.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

THETA_LOW = 15.0     # deg, lower edge of the admissible angle interval
THETA_HIGH = 90.0    # deg
RHO_LOW = 0.3
RHO_HIGH = 1.0
_DOMAIN_TOL = 1e-9

DEFAULT_WAVES = 10_000
DEFAULT_WAVENUMBER = 30.0 * math.pi
DEFAULT_RESOLUTION = 128

_REJECTION_BUDGET_FACTOR = 10_000


@dataclass(frozen=True)
class StructureParams:
    """Structure parameters S = (theta1, theta2, theta3, rho).

    Angles are in degrees; each is either 0 or inside [15, 90], and at least
    one angle must be nonzero. ``rho`` is the volume fraction of the solid
    phase M1, inside [0.3, 1]. The nominal domain is open; closed boundary
    values are accepted because optimizers and the isotropy limits use them.
    """

    theta: tuple[float, float, float]
    rho: float

    def __post_init__(self):
        theta = tuple(float(t) for t in self.theta)
        if len(theta) != 3:
            raise ValueError("theta must have exactly three entries")
        cleaned = []
        for t in theta:
            if abs(t) <= _DOMAIN_TOL:
                cleaned.append(0.0)
            elif THETA_LOW - _DOMAIN_TOL <= t <= THETA_HIGH + _DOMAIN_TOL:
                cleaned.append(min(max(t, THETA_LOW), THETA_HIGH))
            else:
                raise ValueError(
                    f"theta={t} outside the admissible set {{0}} u [15, 90] degrees")
        if not any(t > 0.0 for t in cleaned):
            raise ValueError("at least one angle must be nonzero")
        rho = float(self.rho)
        if not (RHO_LOW - _DOMAIN_TOL <= rho <= RHO_HIGH + _DOMAIN_TOL):
            raise ValueError(f"rho={rho} outside the admissible interval [0.3, 1]")
        rho = min(max(rho, RHO_LOW), RHO_HIGH)
        object.__setattr__(self, "theta", tuple(cleaned))
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float).reshape(4)
        return cls(theta=(arr[0], arr[1], arr[2]), rho=arr[3])

    def as_array(self):
        return np.array([*self.theta, self.rho])

    @property
    def n_nonzero(self):
        return sum(1 for t in self.theta if t > 0.0)

    def permuted(self, perm):
        """Parameters with angles permuted: theta'[i] = theta[perm[i]]."""
        return StructureParams(theta=tuple(self.theta[p] for p in perm), rho=self.rho)


@dataclass(frozen=True)
class WaveSet:
    """Sampled cosine waves: unit directions, phase angles and the wavenumber."""

    directions: np.ndarray   # (n, 3) unit vectors
    phases: np.ndarray       # (n,) in [0, 2 pi)
    wavenumber: float

    def __post_init__(self):
        d = np.array(self.directions, dtype=float)
        p = np.array(self.phases, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] != p.shape[0]:
            raise ValueError("inconsistent wave set shapes")
        if np.abs(np.linalg.norm(d, axis=1) - 1.0).max() > 1e-12:
            raise ValueError("wave directions must be unit vectors")
        d.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "phases", p)

    @property
    def count(self):
        return self.directions.shape[0]


def threshold_level(rho):
    """Field threshold f0 = sqrt(2) erfinv(2 rho - 1) for a volume fraction rho.

    Solved by a safeguarded Newton iteration on ``math.erf``; accurate to
    better than 1e-12.
    """
    rho = float(rho)
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho={rho} outside (0, 1)")
    target = 2.0 * rho - 1.0
    sign = 1.0 if target >= 0 else -1.0
    t = abs(target)
    half_sqrt_pi = math.sqrt(math.pi) / 2.0
    x = 0.0
    for _ in range(200):
        err = math.erf(x) - t
        step = err * half_sqrt_pi * math.exp(x * x)
        x_new = x - step
        if not math.isfinite(x_new):
            break
        if abs(x_new - x) <= 1e-16 * (1.0 + abs(x_new)):
            x = x_new
            break
        x = x_new
    return sign * math.sqrt(2.0) * x


def _active_axes(params):
    return [(axis, math.cos(math.radians(t)))
            for axis, t in enumerate(params.theta) if t > 0.0]


def sample_wave_vectors(params, n_waves, rng):
    """Sample ``n_waves`` directions uniformly on the union of allowed caps.

    Rejection sampling from the uniform sphere; a direction k is accepted if
    |k . e_i| > cos(theta_i) for some axis i with theta_i > 0. Raises
    RuntimeError if more than 1e4 * n_waves candidate draws are needed.
    """
    if n_waves < 1:
        raise ValueError("n_waves must be >= 1")
    rng = np.random.default_rng(rng)
    active = _active_axes(params)
    if not active:
        raise ValueError("all angles are zero; the acceptance region is empty")
    budget = _REJECTION_BUDGET_FACTOR * n_waves
    drawn = 0
    chunk = min(max(4 * n_waves, 1024), 1 << 16)
    out = []
    n_found = 0
    while n_found < n_waves:
        if drawn >= budget:
            raise RuntimeError(
                f"rejection sampling exceeded its budget ({budget} draws); "
                "degenerate structure parameters")
        k = rng.standard_normal((chunk, 3))
        drawn += chunk
        norms = np.linalg.norm(k, axis=1)
        ok = norms > 1e-12
        k = k[ok] / norms[ok, None]
        accept = np.zeros(k.shape[0], dtype=bool)
        for axis, cos_t in active:
            accept |= np.abs(k[:, axis]) > cos_t
        k = k[accept]
        out.append(k)
        n_found += k.shape[0]
    return np.concatenate(out)[:n_waves]


def build_wave_set(params, n_waves=DEFAULT_WAVES, beta=DEFAULT_WAVENUMBER, rng=None):
    """Sample a full wave set (directions and phases) for given parameters."""
    rng = np.random.default_rng(rng)
    directions = sample_wave_vectors(params, n_waves, rng)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=n_waves)
    return WaveSet(directions=directions, phases=phases, wavenumber=float(beta))


def evaluate_grf(points, waves):
    """Evaluate the random field f(x) = sqrt(2/N) sum_i cos(beta n_i . x + gamma_i).

    ``points`` has shape (..., 3); the result drops the last axis.
    """
    pts = np.asarray(points, dtype=float)
    squeeze = pts.ndim == 1
    pts = np.atleast_2d(pts)
    n = waves.count
    scale = math.sqrt(2.0 / n)
    # keep chunk * n below ~2^24 entries
    chunk = max(1, (1 << 24) // max(n, 1))
    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        phase = waves.wavenumber * (block @ waves.directions.T) + waves.phases
        out[start:start + chunk] = np.cos(phase).sum(axis=1) * scale
    return out[0] if squeeze else out.reshape(np.asarray(points).shape[:-1])


def grf_on_grid(waves, resolution, edge=1.0):
    """Evaluate the field at all voxel centers of a periodic cubic grid.

    Axis-separable evaluation through complex exponentials; agrees with
    :func:`evaluate_grf` at the voxel centers to within 1e-12.
    """
    n = int(resolution)
    centers = (np.arange(n) + 0.5) * (edge / n)
    d = waves.directions
    ux = np.exp(1j * waves.wavenumber * np.outer(d[:, 0], centers))
    uy = np.exp(1j * waves.wavenumber * np.outer(d[:, 1], centers))
    uz = np.exp(1j * waves.wavenumber * np.outer(d[:, 2], centers))
    cz = np.exp(1j * waves.phases)[:, None] * uz
    scale = math.sqrt(2.0 / waves.count)
    field = np.empty((n, n, n))
    for k in range(n):
        field[:, :, k] = scale * (ux.T @ (cz[:, k, None] * uy)).real
    return field


@dataclass(frozen=True)
class VoxelGrid:
    """Periodic two-phase voxel grid; phase 0 is the solid M1, phase 1 is M2."""

    phase: np.ndarray    # (nx, ny, nz) uint8
    edge: float = 1.0

    def __post_init__(self):
        p = np.array(self.phase, dtype=np.uint8)
        if p.ndim != 3 or min(p.shape) < 2:
            raise ValueError("phase grid must be 3d with at least 2 voxels per axis")
        if p.max(initial=0) > 1:
            raise ValueError("phase values must be 0 or 1")
        p.setflags(write=False)
        object.__setattr__(self, "phase", p)

    @property
    def shape(self):
        return self.phase.shape

    def solid_fraction(self):
        """Volume fraction of phase 0 (material M1)."""
        return 1.0 - float(self.phase.mean())

    def permuted(self, perm):
        """Grid with spatial axes renumbered: new axis i is old axis perm[i]."""
        return VoxelGrid(phase=np.transpose(self.phase, axes=perm), edge=self.edge)

    # SPNV format: b"SPNV", nx, ny, nz as <u4, then phase bytes, x fastest.
    MAGIC = b"SPNV"

    def save(self, path):
        with open(path, "wb") as fh:
            nx, ny, nz = self.phase.shape
            fh.write(self.MAGIC)
            fh.write(struct.pack("<III", nx, ny, nz))
            fh.write(self.phase.tobytes(order="F"))

    @classmethod
    def load(cls, path, edge=1.0):
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < 16 or raw[:4] != cls.MAGIC:
            raise ValueError(f"{path}: not an SPNV voxel file")
        nx, ny, nz = struct.unpack("<III", raw[4:16])
        expected = 16 + nx * ny * nz
        if len(raw) != expected:
            raise ValueError(f"{path}: truncated or oversized voxel data "
                             f"({len(raw)} bytes, expected {expected})")
        phase = np.frombuffer(raw[16:], dtype=np.uint8).reshape((nx, ny, nz), order="F")
        return cls(phase=phase, edge=edge)


def generate_voxel_grid(params, resolution=DEFAULT_RESOLUTION, n_waves=DEFAULT_WAVES,
                        beta=DEFAULT_WAVENUMBER, rng=None, edge=1.0):
    """Generate the voxelized two-phase geometry for structure parameters.

    The field is evaluated at voxel centers ((i + 1/2) / n) * edge; a voxel
    belongs to phase 0 (solid) where the field is at or below the threshold
    for the requested volume fraction.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    waves = build_wave_set(params, n_waves=n_waves, beta=beta, rng=rng)
    field = grf_on_grid(waves, resolution, edge=edge)
    f0 = threshold_level(params.rho)
    phase = (field > f0).astype(np.uint8)
    return VoxelGrid(phase=phase, edge=edge)
