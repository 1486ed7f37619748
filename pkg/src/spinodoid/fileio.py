"""Line-oriented file formats for parameters, datasets, problems and results.

Parameter and dataset files are JSON-lines documents: the first line is a
metadata header (format tag, version, the exact invocation and seed), each
following line one record. Records are append-only, which makes long
homogenization runs resumable: a record is identified by the hash of its
structure parameters and geometry seed, and existing records are skipped.
Every float is serialized with full round-trip precision and keys are
sorted, so outputs are byte-reproducible.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .design import (DesignProblem, constraint_fix_density, constraint_min_modulus,
                     objective_match_tensor, objective_min_density, objective_ratio)
from .geometry import StructureParams
from .training import Dataset

PARAMS_FORMAT = "spinodoid-params"
DATASET_FORMAT = "spinodoid-dataset"
PROBLEM_FORMAT = "spinodoid-problem"
RESULT_FORMAT = "spinodoid-design-result"
FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file; carries the path and a 1-based line number."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}" if line else f"{path}: {message}")
        self.path = str(path)
        self.line = line


def dump_line(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def record_key(theta, rho, geometry_seed):
    """Stable identity of one record for resumable runs."""
    doc = dump_line({"theta": [float(t) for t in theta], "rho": float(rho),
                     "seed": int(geometry_seed)})
    return hashlib.sha1(doc.encode()).hexdigest()


def _read_jsonl(path, expected_format):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataFormatError(path, 0, str(exc)) from exc
    if not lines:
        raise DataFormatError(path, 1, "empty file")
    parsed = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            parsed.append((n, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataFormatError(path, n, f"invalid JSON ({exc.msg})") from exc
    header = parsed[0][1]
    if not isinstance(header, dict) or header.get("format") != expected_format:
        raise DataFormatError(path, parsed[0][0],
                              f"expected a {expected_format} header line")
    if header.get("version") != FORMAT_VERSION:
        raise DataFormatError(path, parsed[0][0],
                              f"unsupported version {header.get('version')!r}")
    return header, parsed[1:]


def _header(fmt, meta):
    doc = {"format": fmt, "version": FORMAT_VERSION}
    doc.update({"meta": meta})
    return dump_line(doc)


# -----------------------------------------------------------------------------
# Parameter files
# -----------------------------------------------------------------------------

def write_params_file(path, params_list, geometry_seeds, meta):
    """Write sampled structure parameters with their geometry seeds."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_header(PARAMS_FORMAT, meta) + "\n")
        for n, (p, seed) in enumerate(zip(params_list, geometry_seeds)):
            fh.write(dump_line({
                "id": n, "theta": [float(t) for t in p.theta], "rho": float(p.rho),
                "geometry_seed": int(seed)}) + "\n")


def read_params_file(path):
    """Read a parameter file; returns (records, header meta)."""
    header, rows = _read_jsonl(path, PARAMS_FORMAT)
    records = []
    for n, doc in rows:
        try:
            params = StructureParams(theta=tuple(doc["theta"]), rho=doc["rho"])
            records.append({"id": int(doc["id"]), "params": params,
                            "geometry_seed": int(doc["geometry_seed"])})
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(path, n, f"bad parameter record ({exc})") from exc
    return records, header.get("meta", {})


# -----------------------------------------------------------------------------
# Dataset files
# -----------------------------------------------------------------------------

def write_dataset_header(path, meta):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_header(DATASET_FORMAT, meta) + "\n")


def append_dataset_record(path, record):
    """Append one record and flush, so interrupted runs keep their progress."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dump_line(record) + "\n")
        fh.flush()


def dataset_record(record_id, params, geometry_seed, mandel, meta, error=None):
    doc = {
        "id": int(record_id),
        "theta": [float(t) for t in params.theta],
        "rho": float(params.rho),
        "geometry_seed": int(geometry_seed),
        "key": record_key(params.theta, params.rho, geometry_seed),
        "meta": meta,
    }
    if error is not None:
        doc["error"] = str(error)
    else:
        doc["mandel"] = [float(v) for v in np.asarray(mandel).reshape(36)]
    return doc


def read_dataset_file(path, skip_failed=True):
    """Read a dataset file into a training Dataset.

    Returns (dataset, header meta, skipped records).
    """
    header, rows = _read_jsonl(path, DATASET_FORMAT)
    records, skipped = [], []
    for n, doc in rows:
        if "error" in doc:
            if skip_failed:
                skipped.append(doc)
                continue
            raise DataFormatError(path, n, f"failed record: {doc['error']}")
        try:
            params = StructureParams(theta=tuple(doc["theta"]), rho=doc["rho"])
            mandel = np.asarray(doc["mandel"], dtype=float).reshape(6, 6)
            meta = dict(doc.get("meta", {}))
            meta["geometry_seed"] = doc.get("geometry_seed")
            records.append((params, mandel, meta))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(path, n, f"bad dataset record ({exc})") from exc
    if not records:
        raise DataFormatError(path, 0, "dataset contains no usable records")
    return Dataset.from_records(records), header.get("meta", {}), skipped


def existing_record_keys(path):
    """Keys of records already present in a dataset file (resume support)."""
    try:
        header, rows = _read_jsonl(path, DATASET_FORMAT)
    except (DataFormatError, FileNotFoundError):
        return set()
    return {doc.get("key") for _, doc in rows if "key" in doc}


# -----------------------------------------------------------------------------
# Problem and result files
# -----------------------------------------------------------------------------

def read_problem_file(path):
    """Parse a design problem document.

    Returns (DesignProblem, options dict, raw document).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(path, exc.lineno, f"invalid JSON ({exc.msg})") from exc
    except OSError as exc:
        raise DataFormatError(path, 0, str(exc)) from exc
    if not isinstance(doc, dict) or doc.get("format") != PROBLEM_FORMAT:
        raise DataFormatError(path, 1, f"expected a {PROBLEM_FORMAT} document")
    if doc.get("version") != FORMAT_VERSION:
        raise DataFormatError(path, 1, f"unsupported version {doc.get('version')!r}")

    def build(entry, kind):
        typ = entry.get("type")
        try:
            if kind == "objective" and typ == "match_tensor":
                return objective_match_tensor(
                    np.asarray(entry["target_mandel"], dtype=float).reshape(6, 6))
            if kind == "objective" and typ == "min_density":
                return objective_min_density()
            if kind == "objective" and typ == "modulus_ratio":
                return objective_ratio(entry["d2"], entry["d3"], entry["target_ratio"])
            if kind == "constraint" and typ == "min_modulus":
                return constraint_min_modulus(entry["direction"], entry["bound"])
            if kind == "constraint" and typ == "fix_density":
                return constraint_fix_density(entry["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(path, 1, f"bad {kind} entry {typ!r}: {exc}") from exc
        raise DataFormatError(path, 1, f"unknown {kind} type {typ!r}")

    objectives = tuple(build(e, "objective") for e in doc.get("objective", []))
    if not objectives:
        raise DataFormatError(path, 1, "problem declares no objective")
    inequalities, equalities = [], []
    for entry in doc.get("constraints", []):
        built = build(entry, "constraint")
        if entry.get("type") == "fix_density":
            equalities.append(built)
        else:
            inequalities.append(built)
    problem = DesignProblem(objectives=objectives,
                            inequalities=tuple(inequalities),
                            equalities=tuple(equalities))
    return problem, dict(doc.get("options", {})), doc


def write_design_result(path, result, meta):
    """Write the design outcome with the full per-subdomain table."""
    doc = {
        "format": RESULT_FORMAT,
        "version": FORMAT_VERSION,
        "meta": meta,
        "best": {
            "s": [float(v) for v in result.s],
            "q_rad": [float(v) for v in result.q],
            "q_deg": [float(np.degrees(v)) for v in result.q],
            "rotation": [[float(v) for v in row] for row in result.rotation],
            "objective": float(result.objective),
            "subdomain": result.subdomain,
        },
        "subdomains": [
            {
                "name": r.subdomain.name,
                "mask": list(r.subdomain.mask),
                "feasible": bool(r.feasible),
                "objective": None if not r.feasible else float(r.objective),
                "max_violation": None if not r.feasible else float(r.max_violation),
                "s": None if r.s is None else [float(v) for v in r.s],
                "q_rad": None if r.q is None else [float(v) for v in r.q],
            }
            for r in result.table
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
