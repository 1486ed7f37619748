"""Constrained surrogate mapping structure parameters to effective stiffness.

The map chains four stages:

1. affine input normalization to (-1, 1), with one shared range for the
   three angles (per-angle ranges would break permutation equivariance),
2. the permutation-equivariant network producing a minor/major-symmetric
   rank-4 matrix with orthorhombic zeros,
3. an isotropy filter t = t_iso + kappa(S) t_aniso whose factor kappa
   vanishes for a solid cell or a 90-degree angle,
4. PSD squaring C = s_out * (t : t) with a single positive output scale.

A per-component affine output map after the squaring stage would destroy
the positive-semidefiniteness guarantee, hence the single global scale
s_out, fitted as the largest target Frobenius norm of the training set.

The rotation-extended map applies a Rodrigues rotation to the result.
Every stage has a hand-written vector-Jacobian product, so gradients with
respect to parameters, structure parameters and rotation angles are exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import equivariant as eq
from .geometry import StructureParams, THETA_LOW, THETA_HIGH, RHO_LOW, RHO_HIGH
from .tensors import (ElasticityTensor, MANDEL_PAIRS, MANDEL_WEIGHTS, P1_MANDEL,
                      P2_MANDEL, mandel_rotation, mandel_rotation_tangent,
                      rodrigues_derivatives)

MODEL_FORMAT = "spinodoid-model"
MODEL_VERSION = 1

_DOMAIN_TOL = 1e-9

# flat indices into the 81-entry rank-4 output for each Mandel entry (a, b)
_M2T_FLAT = np.empty((6, 6), dtype=np.int64)
for _a, (_i, _j) in enumerate(MANDEL_PAIRS):
    for _b, (_k, _l) in enumerate(MANDEL_PAIRS):
        _M2T_FLAT[_a, _b] = ((_i * 3 + _j) * 3 + _k) * 3 + _l
_M2T_W = np.outer(MANDEL_WEIGHTS, MANDEL_WEIGHTS)


def default_network_spec():
    """Two rank-1 hidden layers of width ten, one symmetrized rank-4 output."""
    return (
        eq.LayerSpec(in_nodes=((1, 1), (0, 1)), out_nodes=((1, 10),),
                     activation="softplus"),
        eq.LayerSpec(in_nodes=((1, 10),), out_nodes=((1, 10),),
                     activation="softplus"),
        eq.LayerSpec(in_nodes=((1, 10),), out_nodes=((4, 1),),
                     activation="linear", symmetrize=True,
                     zero_pattern="orthorhombic-rank4"),
    )


@dataclass(frozen=True)
class Normalizer:
    """Input ranges (orbit-shared for the angles) and the global output scale."""

    theta_min: float
    theta_max: float
    rho_min: float
    rho_max: float
    scale_out: float

    def __post_init__(self):
        if self.scale_out <= 0.0:
            raise ValueError("output scale must be positive")

    def _affine(self, x, lo, hi):
        span = max(hi - lo, 1e-9)
        return 2.0 * (x - lo) / span - 1.0

    def encode(self, s_arr):
        """Map raw (batch, 4) parameters to normalized network inputs."""
        theta_hat = self._affine(s_arr[:, :3], self.theta_min, self.theta_max)
        rho_hat = self._affine(s_arr[:, 3], self.rho_min, self.rho_max)
        return theta_hat, rho_hat

    def input_gradients(self):
        """d(normalized)/d(raw) for theta and rho."""
        return (2.0 / max(self.theta_max - self.theta_min, 1e-9),
                2.0 / max(self.rho_max - self.rho_min, 1e-9))


def fit_normalizer(s_arr, targets):
    """Fit input ranges and the output scale from a training set.

    The three angles share one (min, max) pair; s_out is the largest target
    Frobenius norm (Mandel).
    """
    s_arr = np.asarray(s_arr, dtype=float)
    targets = np.asarray(targets, dtype=float)
    norms = np.linalg.norm(targets.reshape(targets.shape[0], -1), axis=1)
    return Normalizer(
        theta_min=float(s_arr[:, :3].min()),
        theta_max=float(s_arr[:, :3].max()),
        rho_min=float(s_arr[:, 3].min()),
        rho_max=float(s_arr[:, 3].max()),
        scale_out=float(norms.max()),
    )


@dataclass(frozen=True)
class SurrogateModel:
    """Trained surrogate: architecture, flat parameters, normalizer, metadata."""

    spec: tuple
    params: np.ndarray
    normalizer: Normalizer
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        params = np.array(self.params, dtype=float)
        expected = eq.n_parameters(self.spec)
        if params.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {params.shape}")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "spec", tuple(self.spec))

    def with_params(self, params, **metadata):
        meta = dict(self.metadata)
        meta.update(metadata)
        return replace(self, params=np.asarray(params, dtype=float), metadata=meta)

    def __call__(self, s, q=None):
        if q is None:
            return surrogate_forward(s, self)
        return extended_forward(s, q, self)


def anisotropy_factor(s):
    """kappa(S) = (1 - rho) prod_i (1 - theta_i / 90deg), in [0, 1)."""
    arr = s.as_array() if isinstance(s, StructureParams) else np.asarray(s, dtype=float)
    if arr.ndim == 1:
        return float((1.0 - arr[3]) * np.prod(1.0 - arr[:3] / 90.0))
    return (1.0 - arr[:, 3]) * np.prod(1.0 - arr[:, :3] / 90.0, axis=1)


def _clamp_domain(s_arr):
    """Clamp values within 1e-9 of the closed domain; reject anything further out."""
    s = np.array(s_arr, dtype=float)
    theta = s[:, :3]
    near_zero = np.abs(theta) <= _DOMAIN_TOL
    in_band = (theta >= THETA_LOW - _DOMAIN_TOL) & (theta <= THETA_HIGH + _DOMAIN_TOL)
    if not np.all(near_zero | in_band):
        bad = theta[~(near_zero | in_band)]
        raise ValueError(f"angles outside {{0}} u [15, 90] degrees: {bad}")
    theta = np.where(near_zero, 0.0, np.clip(theta, THETA_LOW, THETA_HIGH))
    rho = s[:, 3]
    if np.any(rho < RHO_LOW - _DOMAIN_TOL) or np.any(rho > RHO_HIGH + _DOMAIN_TOL):
        raise ValueError(f"rho outside [0.3, 1]: {rho}")
    s[:, :3] = theta
    s[:, 3] = np.clip(rho, RHO_LOW, RHO_HIGH)
    return s


def _as_batch(s):
    if isinstance(s, StructureParams):
        return s.as_array()[None, :], True
    arr = np.asarray(s, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def forward_batch(s, model, with_cache=False):
    """Unrotated surrogate on a batch of parameter rows; returns (B, 6, 6)."""
    s_arr, single = _as_batch(s)
    s_arr = _clamp_domain(s_arr)
    theta_hat, rho_hat = model.normalizer.encode(s_arr)
    flat, net_cache = eq.network_forward([theta_hat, rho_hat], model.spec,
                                         model.params, with_cache=True)
    m = flat[:, _M2T_FLAT.ravel()].reshape(-1, 6, 6) * _M2T_W
    c1 = np.einsum("ij,bij->b", P1_MANDEL, m)
    c2 = np.einsum("ij,bij->b", P2_MANDEL, m) / 5.0
    m_iso = c1[:, None, None] * P1_MANDEL + c2[:, None, None] * P2_MANDEL
    kappa = (1.0 - s_arr[:, 3]) * np.prod(1.0 - s_arr[:, :3] / 90.0, axis=1)
    m_t = m_iso + kappa[:, None, None] * (m - m_iso)
    c_out = model.normalizer.scale_out * np.einsum("bij,bjk->bik", m_t, m_t)
    if not with_cache:
        return c_out
    cache = {
        "s_arr": s_arr, "net_cache": net_cache, "m": m, "m_iso": m_iso,
        "kappa": kappa, "m_t": m_t, "single": single,
    }
    return c_out, cache


def backward_batch(cache, model, cotangents):
    """VJP of :func:`forward_batch`.

    Parameters
    ----------
    cotangents : ndarray (B, 6, 6)
        Upstream gradient w.r.t. the unrotated stiffness matrices.

    Returns
    -------
    grad_params : ndarray, summed over the batch.
    grad_s : ndarray (B, 4), per-record gradients w.r.t. (theta, rho).
    """
    g = np.asarray(cotangents, dtype=float)
    if g.ndim == 2:
        g = g[None, :, :]
    s_arr = cache["s_arr"]
    m, m_iso, kappa, m_t = cache["m"], cache["m_iso"], cache["kappa"], cache["m_t"]
    scale = model.normalizer.scale_out
    # C = scale * m_t m_t
    d_mt = scale * (np.einsum("bij,bkj->bik", g, m_t) + np.einsum("bji,bjk->bik", m_t, g))
    # m_t = m_iso + kappa (m - m_iso)
    d_kappa = np.einsum("bij,bij->b", d_mt, m - m_iso)
    d_m = kappa[:, None, None] * d_mt
    d_miso = (1.0 - kappa)[:, None, None] * d_mt
    # m_iso = P1 <P1, m> + (1/5) P2 <P2, m>
    dc1 = np.einsum("ij,bij->b", P1_MANDEL, d_miso)
    dc2 = np.einsum("ij,bij->b", P2_MANDEL, d_miso) / 5.0
    d_m += dc1[:, None, None] * P1_MANDEL + dc2[:, None, None] * P2_MANDEL
    # Mandel gather: every (a, b) reads one distinct flat rank-4 entry
    d_flat = np.zeros((g.shape[0], 81))
    d_flat[:, _M2T_FLAT.ravel()] = (d_m * _M2T_W).reshape(-1, 36)
    grad_params, d_in = eq.network_vjp(cache["net_cache"], model.spec,
                                       model.params, d_flat)
    dtheta_dn, drho_dn = model.normalizer.input_gradients()
    grad_s = np.empty((g.shape[0], 4))
    grad_s[:, :3] = d_in[:, :3] * dtheta_dn
    grad_s[:, 3] = d_in[:, 3] * drho_dn
    # kappa path, in raw units (theta in degrees)
    one_m = 1.0 - s_arr[:, :3] / 90.0
    for i in range(3):
        others = np.prod(np.delete(one_m, i, axis=1), axis=1)
        grad_s[:, i] += d_kappa * (1.0 - s_arr[:, 3]) * others * (-1.0 / 90.0)
    grad_s[:, 3] += d_kappa * (-np.prod(one_m, axis=1))
    return grad_params, grad_s


def surrogate_forward(s, model) -> ElasticityTensor:
    """Evaluate the surrogate at structure parameters (unrotated frame)."""
    c = forward_batch(s, model)
    return ElasticityTensor(c[0])


def extended_forward(s, q, model) -> ElasticityTensor:
    """Rotation-extended surrogate: Q(q) applied to the surrogate output.

    ``q = (phi, omega, eps)`` are Rodrigues angles in radians.
    """
    c, _ = extended_forward_with_cache(s, q, model)
    return ElasticityTensor(c)


def extended_forward_with_cache(s, q, model):
    """Rotated forward pass keeping every intermediate for the VJP."""
    c0, cache = forward_batch(s, model, with_cache=True)
    if q is None:
        cache.update({"q": None, "c0": c0[0]})
        return c0[0], cache
    phi, omega, eps = (float(v) for v in q)
    qmat, dq = rodrigues_derivatives(phi, omega, eps)
    r = mandel_rotation(qmat)
    c = r @ c0[0] @ r.T
    cache.update({"q": (phi, omega, eps), "qmat": qmat, "dqmat": dq, "r": r,
                  "c0": c0[0]})
    return c, cache


def extended_vjp(cache, model, cotangent):
    """Gradients of <cotangent, C> w.r.t. (S, q, params) for a single point.

    Returns
    -------
    grad_s : ndarray (4,)
    grad_q : ndarray (3,) (zeros when the forward pass had no rotation)
    grad_params : ndarray (n_parameters,)
    """
    g = np.asarray(cotangent, dtype=float)
    c0 = cache["c0"]
    if cache["q"] is None:
        grad_params, grad_s = backward_batch(cache, model, g[None])
        return grad_s[0], np.zeros(3), grad_params
    r = cache["r"]
    d_c0 = r.T @ g @ r
    d_r = (g + g.T) @ r @ c0
    grad_q = np.empty(3)
    for k in range(3):
        dr_k = mandel_rotation_tangent(cache["qmat"], cache["dqmat"][k])
        grad_q[k] = float(np.sum(d_r * dr_k))
    grad_params, grad_s = backward_batch(cache, model, d_c0[None])
    return grad_s[0], grad_q, grad_params


def surrogate_gradient(s, q, model, cotangent):
    """Convenience wrapper: gradients of a scalar functional with given dC̄ ≡ cotangent."""
    _, cache = extended_forward_with_cache(s, q, model)
    return extended_vjp(cache, model, cotangent)


# -----------------------------------------------------------------------------
# Serialization
# -----------------------------------------------------------------------------

def _spec_to_doc(spec):
    return [{
        "in_nodes": [list(p) for p in layer.in_nodes],
        "out_nodes": [list(p) for p in layer.out_nodes],
        "activation": layer.activation,
        "symmetrize": layer.symmetrize,
        "zero_pattern": layer.zero_pattern,
    } for layer in spec]


def _spec_from_doc(doc):
    return tuple(eq.LayerSpec(
        in_nodes=tuple(tuple(p) for p in layer["in_nodes"]),
        out_nodes=tuple(tuple(p) for p in layer["out_nodes"]),
        activation=layer["activation"],
        symmetrize=layer["symmetrize"],
        zero_pattern=layer["zero_pattern"],
    ) for layer in doc)


def save_model(model: SurrogateModel, path):
    """Write a model as a versioned, human-readable JSON document.

    Floats are serialized with full round-trip precision, so a reloaded
    model reproduces forward evaluations bit for bit.
    """
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "architecture": _spec_to_doc(model.spec),
        "normalizer": {
            "theta_min": model.normalizer.theta_min,
            "theta_max": model.normalizer.theta_max,
            "rho_min": model.normalizer.rho_min,
            "rho_max": model.normalizer.rho_max,
            "scale_out": model.normalizer.scale_out,
        },
        "params": [float(v) for v in model.params],
        "metadata": model.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SurrogateModel:
    """Read a model file written by :func:`save_model`."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a surrogate model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')!r}")
    norm = doc["normalizer"]
    return SurrogateModel(
        spec=_spec_from_doc(doc["architecture"]),
        params=np.array(doc["params"], dtype=float),
        normalizer=Normalizer(**norm),
        metadata=doc.get("metadata", {}),
    )
