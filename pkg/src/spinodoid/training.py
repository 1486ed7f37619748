"""Surrogate calibration: loss, multi-restart local optimization, evaluation.

The data loss is the mean squared Frobenius deviation of the predicted
stiffness, normalized by the largest squared target norm of the set, plus
an L2 penalty on the mean squared parameter. Training is full batch with
exact analytic gradients; each restart runs an independent line-search
quasi-Newton minimization (L-BFGS-B) from its own random initialization
and the restart with the lowest final loss wins.
"""
from __future__ import annotations

import hashlib
import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import equivariant as eq
from . import surrogate as su
from .geometry import StructureParams


@dataclass(frozen=True)
class Dataset:
    """Structure-parameter / stiffness pairs with per-record provenance."""

    params: np.ndarray        # (n, 4) raw (theta1..3 deg, rho)
    targets: np.ndarray       # (n, 6, 6) Mandel matrices
    meta: tuple = ()          # per-record dicts

    def __post_init__(self):
        p = np.array(self.params, dtype=float)
        t = np.array(self.targets, dtype=float)
        if p.ndim != 2 or p.shape[1] != 4 or t.shape != (p.shape[0], 6, 6):
            raise ValueError("inconsistent dataset shapes")
        asym = np.abs(t - t.transpose(0, 2, 1)).max(initial=0.0)
        if asym > 1e-9 * max(1.0, np.abs(t).max(initial=1.0)):
            raise ValueError("dataset contains a non-symmetric stiffness")
        t = 0.5 * (t + t.transpose(0, 2, 1))
        scale = np.abs(t).max(initial=1.0)
        for m in t:
            if np.linalg.eigvalsh(m).min() < -1e-8 * scale:
                raise ValueError("dataset contains an indefinite stiffness")
        for row in p:
            StructureParams.from_array(row)  # domain check
        p.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "meta", tuple(self.meta))

    def __len__(self):
        return self.params.shape[0]

    @classmethod
    def from_records(cls, records):
        """Build from (StructureParams | row, mandel, meta) triples."""
        rows, targets, meta = [], [], []
        for rec in records:
            s, m = rec[0], rec[1]
            rows.append(s.as_array() if isinstance(s, StructureParams) else np.asarray(s, float))
            targets.append(np.asarray(m, dtype=float))
            meta.append(rec[2] if len(rec) > 2 else {})
        return cls(params=np.array(rows), targets=np.array(targets), meta=tuple(meta))

    def subset(self, indices):
        idx = np.asarray(indices)
        return Dataset(params=self.params[idx], targets=self.targets[idx],
                       meta=tuple(self.meta[i] for i in idx) if self.meta else ())

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.params.tobytes())
        h.update(self.targets.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    reg: float = 1e-4
    n_restarts: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    max_evals: int = 20000
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.reg < 0.0:
            raise ValueError("regularization weight must be >= 0")
        if self.n_restarts < 1:
            raise ValueError("need at least one restart")


def loss(params, dataset, spec, normalizer, reg):
    """Total loss and its exact gradient.

    L = 1/(n |D|) sum ||C_pred - C_target||_F^2 + reg * mean(w^2), with
    n = max_alpha ||C_target^alpha||^2.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    model = su.SurrogateModel(spec=spec, params=params, normalizer=normalizer)
    pred, cache = su.forward_batch(dataset.params, model, with_cache=True)
    resid = pred - dataset.targets
    norms_sq = np.einsum("bij,bij->b", dataset.targets, dataset.targets)
    n_scale = float(norms_sq.max())
    data = float(np.einsum("bij,bij->", resid, resid)) / (n_scale * len(dataset))
    grad, _ = su.backward_batch(cache, model, 2.0 * resid / (n_scale * len(dataset)))
    n_var = params.size
    total = data + reg * float(params @ params) / n_var
    grad = grad + (2.0 * reg / n_var) * params
    return total, grad, data


@dataclass(frozen=True)
class RestartResult:
    params: np.ndarray
    final_loss: float
    data_loss: float
    seed: int
    n_evals: int
    n_iterations: int
    status: str
    failed: bool = False


def train_one(dataset, cfg: TrainConfig, init_seed, spec=None, normalizer=None):
    """One local minimization from a seeded random initialization."""
    spec = spec or su.default_network_spec()
    if normalizer is None:
        normalizer = su.fit_normalizer(dataset.params, dataset.targets)
    rng = np.random.default_rng(init_seed)
    x0 = eq.init_params(spec, rng)

    def objective(x):
        value, grad, _ = loss(x, dataset, spec, normalizer, cfg.reg)
        if not np.isfinite(value):
            return 1e100, np.zeros_like(x)
        return value, grad

    res = minimize(objective, x0, jac=True, method="L-BFGS-B",
                   options={"maxfun": cfg.max_evals, "maxiter": cfg.max_evals,
                            "gtol": cfg.gradient_tol, "ftol": cfg.step_tol})
    bad = not np.all(np.isfinite(res.x)) or not np.isfinite(res.fun)
    if bad:
        return RestartResult(params=x0, final_loss=float("inf"), data_loss=float("inf"),
                             seed=int(init_seed), n_evals=int(res.nfev),
                             n_iterations=int(res.nit), status="diverged", failed=True)
    value, _, data = loss(res.x, dataset, spec, normalizer, cfg.reg)
    status = "gradient" if res.success else "budget"
    return RestartResult(params=res.x, final_loss=float(value), data_loss=float(data),
                         seed=int(init_seed), n_evals=int(res.nfev),
                         n_iterations=int(res.nit), status=status)


def _restart_worker(args):
    dataset, cfg, seed, spec = args
    return train_one(dataset, cfg, seed, spec=spec)


def restart_seeds(cfg: TrainConfig):
    """Deterministic per-restart seeds derived from the master seed."""
    return [int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0])
            for k in range(cfg.n_restarts)]


def train_multi_restart(dataset, cfg: TrainConfig, spec=None) -> su.SurrogateModel:
    """Run all restarts and keep the model with the lowest final loss.

    Restarts are independent and run in parallel when cfg.jobs > 1; the
    reduction is a pure minimum (ties go to the earliest restart), so the
    result does not depend on the number of workers.
    """
    spec = spec or su.default_network_spec()
    normalizer = su.fit_normalizer(dataset.params, dataset.targets)
    seeds = restart_seeds(cfg)
    tasks = [(dataset, cfg, seed, spec) for seed in seeds]
    if cfg.jobs > 1:
        with multiprocessing.Pool(cfg.jobs) as pool:
            results = pool.map(_restart_worker, tasks)
    else:
        results = [_restart_worker(t) for t in tasks]
    ok = [r for r in results if not r.failed]
    if not ok:
        raise RuntimeError("all restarts failed")
    best_index = min(range(len(results)),
                     key=lambda i: (results[i].final_loss, i))
    best = results[best_index]
    metadata = {
        "training_seed": cfg.seed,
        "dataset_id": dataset.content_hash(),
        "n_records": len(dataset),
        "reg": cfg.reg,
        "final_loss": best.final_loss,
        "final_data_loss": best.data_loss,
        "best_restart": best_index,
        "restarts": [
            {"seed": r.seed, "iterations": r.n_iterations, "evals": r.n_evals,
             "loss": r.final_loss, "status": r.status} for r in results],
    }
    return su.SurrogateModel(spec=spec, params=best.params,
                             normalizer=normalizer, metadata=metadata)


@dataclass(frozen=True)
class EvalReport:
    loss: float
    rel_errors: np.ndarray      # per-record ||pred - target|| / ||target||
    pairs: np.ndarray           # (n * 21, 2) upper-triangle (target, predicted)
    pair_index: tuple           # (record_id, mandel "ab") per pair row
    n_scale: float


_UPPER = [(a, b) for a in range(6) for b in range(a, 6)]


def evaluate(model, dataset) -> EvalReport:
    """Data loss on a dataset (no regularization, n from this dataset)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    pred = su.forward_batch(dataset.params, model)
    resid = pred - dataset.targets
    norms_sq = np.einsum("bij,bij->b", dataset.targets, dataset.targets)
    n_scale = float(norms_sq.max())
    value = float(np.einsum("bij,bij->", resid, resid)) / (n_scale * len(dataset))
    rel = np.sqrt(np.einsum("bij,bij->b", resid, resid) / norms_sq)
    pairs = np.empty((len(dataset) * len(_UPPER), 2))
    index = []
    row = 0
    for rec in range(len(dataset)):
        for a, b in _UPPER:
            pairs[row, 0] = dataset.targets[rec, a, b]
            pairs[row, 1] = pred[rec, a, b]
            index.append((rec, f"{a + 1}{b + 1}"))
            row += 1
    return EvalReport(loss=value, rel_errors=rel, pairs=pairs,
                      pair_index=tuple(index), n_scale=n_scale)
