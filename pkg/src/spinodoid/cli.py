"""Command-line pipeline: sample, simulate, train, evaluate, design, export.

Every command is deterministic under a fixed --seed and embeds its exact
invocation in the output header, so reruns are byte-reproducible. Angles
are degrees at every file and flag boundary; Rodrigues angles are radians
only inside the rotation code.

Exit codes: 0 success, 2 usage error, 3 data/schema error, 4 numerical
failure (non-convergence everywhere, infeasible design).
"""
from __future__ import annotations

import argparse
import csv
import math
import multiprocessing
import os
import sys

import numpy as np

from . import fileio
from .design import DesignOptions, design, subdomains, verify_design
from .fileio import DataFormatError
from .geometry import (DEFAULT_RESOLUTION, DEFAULT_WAVENUMBER, DEFAULT_WAVES,
                       StructureParams, generate_voxel_grid)
from .homogenization import (ConvergenceError, DEFAULT_MATERIALS, SolverConfig,
                             effective_elasticity)
from .sampling import SamplingPlan, build_dataset_params
from .surrogate import (SurrogateModel, extended_forward, load_model, save_model,
                        surrogate_forward)
from .tensors import ElasticityTensor, directional_modulus
from .training import Dataset, TrainConfig, evaluate, train_multi_restart


def _env_int(name, default):
    value = os.environ.get(name)
    return int(value) if value else default


def _invocation(argv):
    return "spinodoid " + " ".join(argv)


def _geometry_seeds(master_seed, count):
    return [int(np.random.SeedSequence([master_seed, 1000 + k]).generate_state(1)[0])
            for k in range(count)]


def _parse_inline_params(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise ValueError("expected theta1,theta2,theta3,rho")
    return StructureParams(theta=tuple(parts[:3]), rho=parts[3])


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------

def cmd_sample(args, argv):
    plan = SamplingPlan(n_samples=args.count, bias_theta=args.bias_theta,
                        bias_rho=args.bias_rho, space=args.space, seed=args.seed)
    params = build_dataset_params(plan)
    seeds = _geometry_seeds(args.seed, len(params))
    fileio.write_params_file(args.out, params, seeds, meta={
        "command": _invocation(argv), "seed": args.seed, "count": args.count,
        "space": args.space, "bias_theta": args.bias_theta, "bias_rho": args.bias_rho,
    })
    print(f"wrote {len(params)} parameter records to {args.out}")
    return 0


def _homogenize_record(task):
    record, resolution, n_waves, beta, tol, max_iter, scheme = task
    params = record["params"]
    cfg = SolverConfig(tolerance=tol, max_iterations=max_iter, scheme=scheme)
    try:
        grid = generate_voxel_grid(params, resolution=resolution, n_waves=n_waves,
                                   beta=beta, rng=record["geometry_seed"])
        c_eff, info = effective_elasticity(grid, DEFAULT_MATERIALS, cfg)
    except ConvergenceError as exc:
        return fileio.dataset_record(
            record["id"], params, record["geometry_seed"], None,
            meta={"resolution": resolution, "n_waves": n_waves, "beta": beta,
                  "tolerance": tol}, error=f"non-convergence: {exc}")
    meta = {
        "resolution": resolution, "n_waves": n_waves, "beta": beta,
        "tolerance": tol, "scheme": scheme,
        "iterations": [case["iterations"] for case in info["cases"]],
        "asymmetry": info["asymmetry"],
        "solid_fraction": info["solid_fraction"],
    }
    return fileio.dataset_record(record["id"], params, record["geometry_seed"],
                                 c_eff.mandel, meta=meta)


def cmd_homogenize(args, argv):
    records, _ = fileio.read_params_file(args.params)
    done = fileio.existing_record_keys(args.out) if args.resume else set()
    if not args.resume or not os.path.exists(args.out):
        fileio.write_dataset_header(args.out, meta={
            "command": _invocation(argv), "params_file": args.params,
            "resolution": args.resolution, "n_waves": args.waves, "beta": args.beta,
            "tolerance": args.tol, "seed": args.seed, "scheme": args.scheme,
        })
    pending = [r for r in records
               if fileio.record_key(r["params"].theta, r["params"].rho,
                                    r["geometry_seed"]) not in done]
    tasks = [(r, args.resolution, args.waves, args.beta, args.tol,
              args.max_iterations, args.scheme) for r in pending]
    n_failed = 0
    if args.jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            for doc in pool.imap(_homogenize_record, tasks):
                fileio.append_dataset_record(args.out, doc)
                n_failed += 1 if "error" in doc else 0
    else:
        for task in tasks:
            doc = _homogenize_record(task)
            fileio.append_dataset_record(args.out, doc)
            n_failed += 1 if "error" in doc else 0
    print(f"homogenized {len(tasks)} records ({n_failed} failed, "
          f"{len(records) - len(tasks)} already present) -> {args.out}")
    return 0


def cmd_train(args, argv):
    dataset, _, skipped = fileio.read_dataset_file(args.data)
    if skipped:
        print(f"warning: skipping {len(skipped)} failed records", file=sys.stderr)
    cfg = TrainConfig(reg=args.reg, n_restarts=args.restarts, seed=args.seed,
                      max_evals=args.max_evals, jobs=args.jobs)
    model = train_multi_restart(dataset, cfg)
    meta = dict(model.metadata)
    meta["command"] = _invocation(argv)
    meta["data_file"] = args.data
    model = SurrogateModel(spec=model.spec, params=model.params,
                           normalizer=model.normalizer, metadata=meta)
    save_model(model, args.out_model)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write(f"# {_invocation(argv)}\n")
            for k, r in enumerate(meta["restarts"]):
                fh.write(f"restart={k} seed={r['seed']} iterations={r['iterations']} "
                         f"evals={r['evals']} loss={r['loss']:.12e} status={r['status']}\n")
    print(f"best restart {meta['best_restart']}: loss {meta['final_loss']:.6e} "
          f"(data {meta['final_data_loss']:.6e}) -> {args.out_model}")
    return 0


def cmd_eval(args, argv):
    model = load_model(args.model)
    dataset, _, skipped = fileio.read_dataset_file(args.data)
    report = evaluate(model, dataset)
    print(f"test loss {report.loss:.6e} over {len(dataset)} records "
          f"(median relative error {np.median(report.rel_errors):.4f})")
    if args.out_csv:
        with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["# " + _invocation(argv)])
            writer.writerow(["target_component", "predicted_component",
                             "record_id", "mandel_index"])
            for (rec, comp), (target, predicted) in zip(report.pair_index, report.pairs):
                writer.writerow([repr(float(target)), repr(float(predicted)), rec, comp])
    return 0


def cmd_design(args, argv):
    model = load_model(args.model)
    problem, options, _ = fileio.read_problem_file(args.problem)
    opts = DesignOptions(starts=int(options.get("starts", 5)),
                         seed=int(options.get("seed", args.seed)),
                         constraint_tol=float(options.get("constraint_tol", 1e-6)),
                         max_iterations=int(options.get("max_iterations", 300)))
    try:
        result = design(problem, model, opts)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    fileio.write_design_result(args.out, result, meta={
        "command": _invocation(argv), "model": args.model, "problem": args.problem,
        "seed": opts.seed, "starts": opts.starts,
    })
    theta = ", ".join(f"{v:.2f}" for v in result.s[:3])
    print(f"best: {result.subdomain} theta=({theta}) deg rho={result.s[3]:.4f} "
          f"objective={result.objective:.6e} -> {args.out}")
    return 0


def _fibonacci_sphere(n):
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phi = golden * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def cmd_surface(args, argv):
    if args.tensor_file:
        model_tensor = _load_tensor_file(args.tensor_file)
    else:
        if not args.model or not args.params:
            raise DataFormatError("<args>", 0, "--surface needs --tensor-file or --model with --params")
        model = load_model(args.model)
        params = _parse_inline_params(args.params)
        if args.q:
            q = tuple(math.radians(float(v)) for v in args.q.split(","))
            model_tensor = extended_forward(params.as_array(), q, model)
        else:
            model_tensor = surrogate_forward(params, model)
    points = _fibonacci_sphere(args.samples)
    with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# " + _invocation(argv)])
        writer.writerow(["dx", "dy", "dz", "E"])
        for d in points:
            e = directional_modulus(model_tensor, d / np.linalg.norm(d))
            writer.writerow([repr(float(d[0])), repr(float(d[1])),
                             repr(float(d[2])), repr(float(e))])
    print(f"wrote {args.samples} directional moduli to {args.out_csv}")
    return 0


def _load_tensor_file(path):
    import json
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        mandel = np.asarray(doc["mandel"], dtype=float).reshape(6, 6)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(path, 0, f"bad tensor file: {exc}") from exc
    return ElasticityTensor(mandel)


_SWEEP_AXES = {"t1": 0, "t2": 1, "t3": 2, "rho": 3}


def cmd_sweep(args, argv):
    model = load_model(args.model)
    if args.vary not in _SWEEP_AXES:
        raise DataFormatError("<args>", 0, f"unknown sweep variable {args.vary!r}")
    base = np.zeros(4)
    base[3] = 0.5
    for piece in (args.fix.split(",") if args.fix else []):
        name, _, value = piece.partition("=")
        name = name.strip()
        if name not in _SWEEP_AXES:
            raise DataFormatError("<args>", 0, f"unknown fixed variable {name!r}")
        base[_SWEEP_AXES[name]] = float(value)
    axis = _SWEEP_AXES[args.vary]
    lo, hi = (15.0, 90.0) if axis < 3 else (0.3, 1.0)
    grid = np.linspace(lo, hi, args.steps)
    with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["# " + _invocation(argv)])
        writer.writerow([args.vary, "C1111", "C2222", "C3333"])
        for value in grid:
            s = base.copy()
            s[axis] = value
            c = surrogate_forward(s, model).mandel
            writer.writerow([repr(float(value)), repr(float(c[0, 0])),
                             repr(float(c[1, 1])), repr(float(c[2, 2]))])
    print(f"wrote {args.steps} sweep points to {args.out_csv}")
    return 0


def cmd_geometry(args, argv):
    if "," in args.params:
        params = _parse_inline_params(args.params)
        seed = args.seed
    else:
        records, _ = fileio.read_params_file(args.params)
        matches = [r for r in records if r["id"] == args.id]
        if not matches:
            raise DataFormatError(args.params, 0, f"no record with id {args.id}")
        params = matches[0]["params"]
        seed = matches[0]["geometry_seed"]
    grid = generate_voxel_grid(params, resolution=args.resolution,
                               n_waves=args.waves, beta=args.beta, rng=seed)
    grid.save(args.out)
    print(f"wrote {args.resolution}^3 voxel grid (solid fraction "
          f"{grid.solid_fraction():.4f}) to {args.out}")
    return 0


def cmd_verify(args, argv):
    import json
    model = load_model(args.model)
    problem, _, _ = fileio.read_problem_file(args.problem) if args.problem else (None, {}, {})
    with open(args.result, "r", encoding="utf-8") as fh:
        result_doc = json.load(fh)
    best = result_doc["best"]
    target = None
    if problem is not None:
        for term in problem.objectives:
            if hasattr(term, "target"):
                target = term.target
    record = verify_design(
        np.asarray(best["s"], dtype=float), tuple(best["q_rad"]), target=target,
        constraints=problem.inequalities if problem else (),
        resolution=args.resolution, n_waves=args.waves, seed=args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        record["meta"] = {"command": _invocation(argv)}
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")
    deviation = record.get("relative_deviation")
    msg = f"deviation {deviation:.4f}" if deviation is not None else "no target"
    print(f"verified design through the forward pipeline: {msg} -> {args.out}")
    return 0


# -----------------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="spinodoid",
        description="Spinodoid metamaterials: sampling, homogenization, "
                    "surrogate training and inverse design.")
    sub = parser.add_subparsers(dest="command", required=True)
    default_resolution = _env_int("SPINODOID_RESOLUTION", DEFAULT_RESOLUTION)
    default_jobs = _env_int("SPINODOID_JOBS", 1)

    p = sub.add_parser("sample", help="draw structure parameters")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--space", choices=("tri", "full"), default="tri")
    p.add_argument("--bias-theta", type=float, default=1.6)
    p.add_argument("--bias-rho", type=float, default=1.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("geometry", help="export a voxel grid (SPNV)")
    p.add_argument("--params", required=True,
                   help="inline 't1,t2,t3,rho' (degrees) or a parameter file")
    p.add_argument("--id", type=int, default=0, help="record id within a parameter file")
    p.add_argument("--resolution", type=int, default=default_resolution)
    p.add_argument("--waves", type=int, default=DEFAULT_WAVES)
    p.add_argument("--beta", type=float, default=DEFAULT_WAVENUMBER)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("homogenize", help="simulate effective stiffness per record")
    p.add_argument("--params", required=True)
    p.add_argument("--resolution", type=int, default=default_resolution)
    p.add_argument("--waves", type=int, default=DEFAULT_WAVES)
    p.add_argument("--beta", type=float, default=DEFAULT_WAVENUMBER)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iterations", type=int, default=5000)
    p.add_argument("--scheme", choices=("cg", "basic"), default="cg")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=default_jobs)
    p.add_argument("--resume", action="store_true",
                   help="skip records already present in --out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_homogenize)

    p = sub.add_parser("train", help="calibrate the surrogate on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--restarts", type=int, default=100)
    p.add_argument("--reg", type=float, default=1e-4)
    p.add_argument("--max-evals", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=default_jobs)
    p.add_argument("--out-model", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test loss and correlation export")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("design", help="solve an inverse design problem")
    p.add_argument("--model", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("verify", help="re-simulate a design result")
    p.add_argument("--model", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--problem", default=None)
    p.add_argument("--resolution", type=int, default=default_resolution)
    p.add_argument("--waves", type=int, default=DEFAULT_WAVES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("surface", help="directional Young's modulus over the sphere")
    p.add_argument("--model", default=None)
    p.add_argument("--params", default=None, help="inline 't1,t2,t3,rho'")
    p.add_argument("--q", default=None, help="Rodrigues angles in degrees 'phi,omega,eps'")
    p.add_argument("--tensor-file", default=None)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("sweep", help="1d sensitivity sweep of stiffness entries")
    p.add_argument("--model", required=True)
    p.add_argument("--fix", default=None, help="e.g. 't2=20,t3=0,rho=0.5'")
    p.add_argument("--vary", default="t1", help="one of t1,t2,t3,rho")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
