"""Rank-2 / rank-4 tensor algebra for 3d linear elasticity in Mandel notation.

Conventions
-----------
The Mandel basis order is (11, 22, 33, 23, 13, 12). Shear components carry
a factor of sqrt(2), so that

* double contraction of two rank-4 tensors equals the 6x6 matrix product,
* the Frobenius norm of the 6x6 matrix equals the tensor norm, and
* eigenvalues of the 6x6 matrix are the eigenvalues of the rank-4 tensor
  acting on symmetric rank-2 tensors.

All stiffness values are understood relative to a base material with unit
Young's modulus.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT2 = math.sqrt(2.0)

#: Index pairs (i, j) of the six Mandel slots, order (11, 22, 33, 23, 13, 12).
MANDEL_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

#: Per-slot weights: 1 on normal components, sqrt(2) on shear components.
MANDEL_WEIGHTS = np.array([1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2])

# slot lookup for an (i, j) pair, symmetric in i, j
_PAIR_SLOT = np.empty((3, 3), dtype=int)
for _a, (_i, _j) in enumerate(MANDEL_PAIRS):
    _PAIR_SLOT[_i, _j] = _a
    _PAIR_SLOT[_j, _i] = _a

_W_OUTER = np.outer(MANDEL_WEIGHTS, MANDEL_WEIGHTS)

#: Mandel vector of the rank-2 identity.
IDENTITY_MANDEL_VEC = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

#: Volumetric projector P1 = (1/3) I x I as a 6x6 Mandel matrix.
P1_MANDEL = np.outer(IDENTITY_MANDEL_VEC, IDENTITY_MANDEL_VEC) / 3.0

#: Deviatoric projector P2 = I_s - P1 as a 6x6 Mandel matrix.
P2_MANDEL = np.eye(6) - P1_MANDEL

P1_MANDEL.setflags(write=False)
P2_MANDEL.setflags(write=False)

_SYMMETRY_TOL = 1e-9
_ORTHO_TOL = 1e-12
_COND_LIMIT = 1e12


def iso_projectors():
    """Return the pair (P1, P2) of isotropic projectors as 6x6 Mandel matrices."""
    return P1_MANDEL, P2_MANDEL


# -----------------------------------------------------------------------------
# Mandel <-> rank-4 conversion
# -----------------------------------------------------------------------------

def sym2_to_mandel(t):
    """Convert a symmetric 3x3 tensor to its Mandel 6-vector."""
    t = np.asarray(t, dtype=float)
    return np.array([t[0, 0], t[1, 1], t[2, 2],
                     SQRT2 * t[1, 2], SQRT2 * t[0, 2], SQRT2 * t[0, 1]])


def mandel_to_sym2(v):
    """Convert a Mandel 6-vector to the symmetric 3x3 tensor it represents."""
    v = np.asarray(v, dtype=float)
    t = np.empty((3, 3))
    t[0, 0], t[1, 1], t[2, 2] = v[0], v[1], v[2]
    t[1, 2] = t[2, 1] = v[3] / SQRT2
    t[0, 2] = t[2, 0] = v[4] / SQRT2
    t[0, 1] = t[1, 0] = v[5] / SQRT2
    return t


def tensor4_to_mandel(t):
    """Convert a minor/major-symmetric rank-4 tensor (3,3,3,3) to 6x6 Mandel form."""
    t = np.asarray(t, dtype=float)
    m = np.empty((6, 6))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            m[a, b] = t[i, j, k, l]
    return m * _W_OUTER


def mandel_to_tensor4(m):
    """Convert a 6x6 Mandel matrix to the rank-4 tensor (3,3,3,3) it represents.

    The inverse of :func:`tensor4_to_mandel`; the result has minor and major
    symmetry by construction.

    Raises
    ------
    ValueError
        If ``m`` is not symmetric within a relative tolerance of 1e-9.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (6, 6):
        raise ValueError(f"expected a 6x6 matrix, got shape {m.shape}")
    _check_symmetric(m)
    t = np.empty((3, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            a = _PAIR_SLOT[i, j]
            for k in range(3):
                for l in range(3):
                    b = _PAIR_SLOT[k, l]
                    t[i, j, k, l] = m[a, b] / _W_OUTER[a, b]
    return t


def _check_symmetric(m, tol=_SYMMETRY_TOL):
    scale = max(1.0, float(np.abs(m).max()))
    asym = float(np.abs(m - m.T).max())
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (relative asymmetry {asym / scale:.3e})")


# -----------------------------------------------------------------------------
# Elasticity tensor
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class ElasticityTensor:
    """Stiffness tensor with minor and major symmetry, stored as a 6x6 Mandel matrix.

    Construction symmetrizes the matrix exactly; inputs with a relative
    asymmetry above 1e-9 are rejected.
    """

    mandel: np.ndarray

    def __post_init__(self):
        m = np.array(self.mandel, dtype=float)
        if m.shape != (6, 6):
            raise ValueError(f"expected a 6x6 Mandel matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("Mandel matrix contains non-finite entries")
        _check_symmetric(m)
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "mandel", m)

    @classmethod
    def from_tensor(cls, t):
        """Build from a minor/major-symmetric rank-4 tensor of shape (3,3,3,3)."""
        return cls(tensor4_to_mandel(t))

    @classmethod
    def isotropic(cls, young, poisson):
        """Isotropic stiffness from Young's modulus and Poisson's ratio."""
        lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
        mu = young / (2.0 * (1.0 + poisson))
        return cls.from_lame(lam, mu)

    @classmethod
    def from_lame(cls, lam, mu):
        """Isotropic stiffness from the Lame constants (lambda, mu)."""
        m = lam * np.outer(IDENTITY_MANDEL_VEC, IDENTITY_MANDEL_VEC) + 2.0 * mu * np.eye(6)
        return cls(m)

    @property
    def tensor(self):
        """Rank-4 representation of shape (3,3,3,3)."""
        return mandel_to_tensor4(self.mandel)

    def norm(self):
        """Frobenius norm (identical in Mandel and rank-4 representation)."""
        return float(np.linalg.norm(self.mandel))

    def eigenvalues(self):
        """Eigenvalues of the Mandel matrix, ascending."""
        return np.linalg.eigvalsh(self.mandel)

    def __array__(self, dtype=None):
        return np.asarray(self.mandel, dtype=dtype)


# -----------------------------------------------------------------------------
# Rotations
# -----------------------------------------------------------------------------

_ROT_TOL = 1e-12


@dataclass(frozen=True)
class Rotation:
    """Proper orthogonal 3x3 tensor, optionally tagged with its Rodrigues angles."""

    matrix: np.ndarray
    angles: tuple[float, float, float] | None = field(default=None)

    def __post_init__(self):
        q = np.array(self.matrix, dtype=float)
        if q.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {q.shape}")
        if np.abs(q.T @ q - np.eye(3)).max() > 1e-9:
            raise ValueError("matrix is not orthogonal")
        if abs(np.linalg.det(q) - 1.0) > 1e-9:
            raise ValueError("matrix is not a proper rotation (det != +1)")
        q.setflags(write=False)
        object.__setattr__(self, "matrix", q)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), angles=(0.0, 0.0, 0.0))

    def compose(self, other):
        """Return the rotation self . other (apply ``other`` first)."""
        return Rotation(self.matrix @ other.matrix)


def rotation_axis(phi, omega):
    """Unit rotation axis from spherical coordinates (phi, omega), in radians."""
    sp = math.sin(phi)
    return np.array([sp * math.cos(omega), sp * math.sin(omega), math.cos(phi)])


def _cross_matrix(a):
    return np.array([[0.0, -a[2], a[1]],
                     [a[2], 0.0, -a[0]],
                     [-a[1], a[0], 0.0]])


def rodrigues(phi, omega, eps):
    """Rotation from Rodrigues parameters, all angles in radians.

    The axis is ``a = (sin(phi) cos(omega), sin(phi) sin(omega), cos(phi))``
    and the tensor is ``a x a + cos(eps) (I - a x a) + sin(eps) [a]_x``.
    """
    a = rotation_axis(phi, omega)
    aa = np.outer(a, a)
    q = aa + math.cos(eps) * (np.eye(3) - aa) + math.sin(eps) * _cross_matrix(a)
    return Rotation(q, angles=(float(phi), float(omega), float(eps)))


def rodrigues_derivatives(phi, omega, eps):
    """Rotation matrix and its partial derivatives w.r.t. (phi, omega, eps).

    Returns
    -------
    q : ndarray (3, 3)
    dq : list of three ndarrays (3, 3)
    """
    a = rotation_axis(phi, omega)
    da_dphi = np.array([math.cos(phi) * math.cos(omega),
                        math.cos(phi) * math.sin(omega),
                        -math.sin(phi)])
    da_domega = np.array([-math.sin(phi) * math.sin(omega),
                          math.sin(phi) * math.cos(omega),
                          0.0])
    c, s = math.cos(eps), math.sin(eps)
    aa = np.outer(a, a)
    q = aa + c * (np.eye(3) - aa) + s * _cross_matrix(a)

    def d_axis(da):
        daa = np.outer(da, a) + np.outer(a, da)
        return (1.0 - c) * daa + s * _cross_matrix(da)

    dq_deps = -s * (np.eye(3) - aa) + c * _cross_matrix(a)
    return q, [d_axis(da_dphi), d_axis(da_domega), dq_deps]


def mandel_rotation(q):
    """6x6 Mandel representation R of a rotation: mandel(Q e Q^T) = R mandel(e).

    R is orthogonal, so rotating a stiffness is the congruence R M R^T and
    preserves the Mandel eigenvalues.
    """
    q = np.asarray(q, dtype=float)
    r = np.empty((6, 6))
    for b, (k, l) in enumerate(MANDEL_PAIRS):
        e = np.zeros((3, 3))
        e[k, l] = e[l, k] = 1.0 / MANDEL_WEIGHTS[b]
        if k == l:
            e[k, l] = 1.0
        r[:, b] = sym2_to_mandel(q @ e @ q.T)
    return r


def mandel_rotation_tangent(q, dq):
    """Directional derivative of :func:`mandel_rotation` along a matrix ``dq``."""
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    r = np.empty((6, 6))
    for b, (k, l) in enumerate(MANDEL_PAIRS):
        e = np.zeros((3, 3))
        e[k, l] = e[l, k] = 1.0 / MANDEL_WEIGHTS[b]
        if k == l:
            e[k, l] = 1.0
        r[:, b] = sym2_to_mandel(dq @ e @ q.T + q @ e @ dq.T)
    return r


def rotate_elasticity(c: ElasticityTensor, q: Rotation) -> ElasticityTensor:
    """Rotate a stiffness tensor: (Q * C)_mnop = Q_mi Q_nj Q_ok Q_pl C_ijkl."""
    r = mandel_rotation(q.matrix)
    return ElasticityTensor(r @ c.mandel @ r.T)


# -----------------------------------------------------------------------------
# Isotropic split, PSD squaring, directional modulus
# -----------------------------------------------------------------------------

def isotropic_split_mandel(m):
    """Isotropic/anisotropic split of a 6x6 Mandel matrix; returns (iso, aniso).

    iso = P1 <P1, m> + (1/5) P2 <P2, m> with <.,.> the Frobenius inner
    product; the split is an orthogonal projection, hence idempotent.
    """
    m = np.asarray(m, dtype=float)
    c1 = float(np.sum(P1_MANDEL * m))
    c2 = float(np.sum(P2_MANDEL * m)) / 5.0
    iso = c1 * P1_MANDEL + c2 * P2_MANDEL
    return iso, m - iso


def isotropic_split(t: ElasticityTensor):
    """Split a stiffness into its isotropic and anisotropic parts."""
    iso, aniso = isotropic_split_mandel(t.mandel)
    return ElasticityTensor(iso), ElasticityTensor(aniso)


def square_psd(t: ElasticityTensor) -> ElasticityTensor:
    """Square a symmetric tensor, C = t : t, squaring its Mandel eigenvalues.

    The result is symmetric positive semidefinite.
    """
    m = t.mandel
    return ElasticityTensor(m @ m)


def anisotropy_ratio(c: ElasticityTensor) -> float:
    """Frobenius norm fraction of the anisotropic part, ||aniso|| / ||C||.

    Returns 0 for the zero tensor.
    """
    total = float(np.linalg.norm(c.mandel))
    if total == 0.0:
        return 0.0
    _, aniso = isotropic_split_mandel(c.mandel)
    return float(np.linalg.norm(aniso)) / total


def directional_modulus(c: ElasticityTensor, d) -> float:
    """Young's modulus of stiffness ``c`` in the unit direction ``d``.

    E = 1 / ((d x d) : C^-1 : (d x d))

    Raises
    ------
    ValueError
        If ``d`` is not a unit vector (within 1e-9) or if the Mandel matrix
        has a condition number above 1e12.
    """
    d = np.asarray(d, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    m = c.mandel
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise ValueError(f"stiffness is not invertible (condition number {cond:.3e})")
    n = sym2_to_mandel(np.outer(d, d))
    y = np.linalg.solve(m, n)
    return 1.0 / float(n @ y)


def directional_modulus_with_cotangent(c_mandel, d):
    """Directional modulus and its gradient w.r.t. the Mandel matrix.

    Returns (E, dE/dM) with dE/dM = E^2 y y^T, y = M^-1 mandel(d x d).
    """
    m = np.asarray(c_mandel, dtype=float)
    n = sym2_to_mandel(np.outer(np.asarray(d, float), np.asarray(d, float)))
    y = np.linalg.solve(m, n)
    e = 1.0 / float(n @ y)
    return e, (e * e) * np.outer(y, y)


# -----------------------------------------------------------------------------
# Axis permutations
# -----------------------------------------------------------------------------

def mandel_permutation(perm):
    """6x6 signed permutation matrix P so that permuting tensor axes equals P M P^T.

    ``perm`` maps new axis index to old axis index: the permuted tensor is
    t'[i,j,k,l] = t[perm[i], perm[j], perm[k], perm[l]].
    """
    perm = tuple(int(p) for p in perm)
    p = np.zeros((6, 6))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        b = _PAIR_SLOT[perm[i], perm[j]]
        p[a, b] = 1.0
    return p


def permute_axes(c: ElasticityTensor, perm) -> ElasticityTensor:
    """Renumber the axes of a stiffness tensor: result[ijkl] = c[perm[i],...]."""
    p = mandel_permutation(perm)
    return ElasticityTensor(p @ c.mandel @ p.T)
