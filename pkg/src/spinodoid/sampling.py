"""Structure-parameter sampling for dataset generation.

Training sets live in the sorted subdomain theta1 >= theta2 >= theta3 (the
network is permutation equivariant, so one wedge of the angle space covers
all of it); test sets cover the full space by assigning the sorted angles
to uniformly random axes. Points are drawn by Latin hypercube sampling in
the unit cube, pushed to the sorted region with a closed-form transform
whose output is distributed like descending-sorted uniforms, optionally
biased toward small values, and finally shifted into the physical ranges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import StructureParams

#: Clamp pads keeping emitted parameters strictly inside the open domain.
THETA_CLAMP = (15.1, 89.9)
RHO_CLAMP = (0.301, 0.999)

DEFAULT_BIAS = 1.6


@dataclass(frozen=True)
class SamplingPlan:
    """One dataset draw: size, bias exponents, sampling space and seed."""

    n_samples: int
    bias_theta: float = DEFAULT_BIAS
    bias_rho: float = DEFAULT_BIAS
    space: str = "tri"        # "tri" (sorted subdomain) | "full"
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.bias_theta < 1.0 or self.bias_rho < 1.0:
            raise ValueError("bias exponents must be >= 1")
        if self.space not in ("tri", "full"):
            raise ValueError(f"unknown sampling space {self.space!r}")


def latin_hypercube(n, dim, rng):
    """n stratified points in (0, 1)^dim, one per stratum and axis.

    Each axis is split into n equal strata; a random permutation assigns
    strata to points and the position within a stratum is jittered.
    """
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be >= 1")
    rng = np.random.default_rng(rng)
    pts = np.empty((n, dim))
    for ax in range(dim):
        perm = rng.permutation(n)
        pts[:, ax] = (perm + rng.uniform(size=n)) / n
    return pts


def simplex_transform(xi):
    """Map points of (0,1)^m onto descending tuples 1 >= v1 >= ... >= vm > 0.

    v_j = (xi_j * v_{j-1}^(m-j+1))^(1/(m-j+1)) with v_0 = 1. The output is
    distributed exactly like a descending-sorted sample of m independent
    uniforms, so no draws are wasted on rejection.
    """
    arr = np.asarray(xi, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    m = arr.shape[1]
    out = np.empty_like(arr)
    prev = np.ones(arr.shape[0])
    for j in range(m):
        power = m - j
        prev = (arr[:, j] * prev ** power) ** (1.0 / power)
        out[:, j] = prev
    return out[0] if single else out


def apply_bias(values, bias):
    """Bias values in (0, 1) toward zero: v -> v**bias, order preserving."""
    if bias < 1.0:
        raise ValueError("bias must be >= 1")
    return np.asarray(values, dtype=float) ** bias


def to_structure_params(theta_unit, rho_unit, axes=None) -> StructureParams:
    """Shift unit-interval draws into the physical domain.

    theta_i = v_i * 75deg + 15deg on the assigned axes (0 elsewhere), and
    rho = r * 0.7 + 0.3; boundary hits are clamped strictly inside the open
    domain. ``axes`` lists the target axis of each angle value in order;
    by default the values occupy axes 0..m-1 (sorted-subdomain layout).
    """
    theta_unit = np.atleast_1d(np.asarray(theta_unit, dtype=float))
    m = theta_unit.shape[0]
    if not 1 <= m <= 3:
        raise ValueError("between 1 and 3 nonzero angles are supported")
    if axes is None:
        axes = tuple(range(m))
    theta = [0.0, 0.0, 0.0]
    for value, axis in zip(theta_unit, axes):
        theta[axis] = float(np.clip(value * 75.0 + 15.0, *THETA_CLAMP))
    rho = float(np.clip(rho_unit * 0.7 + 0.3, *RHO_CLAMP))
    return StructureParams(theta=tuple(theta), rho=rho)


def type_counts(n):
    """Split n into (cubic, columnar, lamellar) counts, equal parts with
    cubic preferred, then columnar."""
    cubic = math.ceil(n / 3)
    columnar = math.ceil((n - cubic) / 2)
    lamellar = n - cubic - columnar
    return cubic, columnar, lamellar


def build_dataset_params(plan: SamplingPlan):
    """Draw all structure parameters of a plan, grouped by spinodoid type.

    Returns the cubic block first, then columnar, then lamellar. Each type
    uses its own Latin hypercube over (m + 1) dimensions (m sorted angles
    plus the volume fraction) with an independent child seed.
    """
    counts = type_counts(plan.n_samples)
    seeds = np.random.SeedSequence(plan.seed).spawn(3)
    params = []
    for m, count, seed in zip((3, 2, 1), counts, seeds):
        if count == 0:
            continue
        rng = np.random.default_rng(seed)
        cube = latin_hypercube(count, m + 1, rng)
        theta_unit = apply_bias(simplex_transform(cube[:, :m]), plan.bias_theta)
        rho_unit = apply_bias(cube[:, m], plan.bias_rho)
        theta_unit = np.atleast_2d(theta_unit)
        for row in range(count):
            if plan.space == "full":
                axes = tuple(rng.permutation(3)[:m])
            else:
                axes = None
            params.append(to_structure_params(theta_unit[row], rho_unit[row], axes=axes))
    return params
