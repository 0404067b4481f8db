"""CSV/JSON artifact writers with byte-reproducible formatting.

Floats are written with shortest round-trip repr and files use LF newlines,
so identical inputs produce identical bytes. Missing cells are empty.
"""

import csv
import hashlib
import json

import numpy as np

from .errors import IoFailure

PROX_TRACE_HEADER = ["k", "sigma_sq", "alpha", "gamma", "err", "bound", "obj"]
MAP_TRACE_HEADER = ["k", "n_inner", "J_hat", "J_exact_prox_iterate",
                    "eps", "eps_bound", "avg_gap", "avg_gap_bound"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    raise TypeError(f"cannot format {type(v).__name__} as a CSV cell")


def write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def write_json(path, obj):
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
    except TypeError as e:
        raise IoFailure(f"non-serialisable object for {path}: {e}") from e


def sha256_file(path):
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                digest.update(chunk)
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    return digest.hexdigest()


def trace_metadata(trace):
    """Companion metadata for a trace file; wall time is dropped so that
    repeated runs serialise identically."""
    meta = dict(trace.metadata)
    meta.pop("wall_time", None)
    return meta


def write_prox_trace(csv_path, trace):
    """Trace CSV: one row per step k, plus a .json metadata companion."""
    n = trace.sigma_sq.shape[0]
    rows = []
    for j in range(n):
        rows.append([
            j + 1,
            float(trace.sigma_sq[j]),
            float(trace.alpha[j]),
            float(trace.gamma[j]),
            None if trace.err is None else float(trace.err[j]),
            None if trace.bound is None else float(trace.bound[j]),
            float(trace.obj[j]),
        ])
    write_csv(csv_path, PROX_TRACE_HEADER, rows)
    write_json(_json_companion(csv_path), trace_metadata(trace))


def write_map_trace(csv_path, trace):
    rows = []
    for k in range(1, trace.outer_steps + 1):
        i = k - 1
        rows.append([
            k,
            int(trace.n_inner[i]),
            float(trace.j_hat[k]),
            None if trace.j_prox is None else float(trace.j_prox[i]),
            None if trace.eps is None else float(trace.eps[i]),
            None if trace.eps_bound is None else float(trace.eps_bound[i]),
            None if trace.avg_gap is None else float(trace.avg_gap[i]),
            (None if trace.avg_gap_bound is None
             else float(trace.avg_gap_bound[i])),
        ])
    write_csv(csv_path, MAP_TRACE_HEADER, rows)
    write_json(_json_companion(csv_path), trace_metadata(trace))


def path_trace_header(dimension):
    return (["sigma_sq"] + [f"x_{i}" for i in range(1, dimension + 1)]
            + ["drift_norm", "grad_norm", "B_norm"])


def write_path_trace(csv_path, states):
    d = states[0].point.shape[0]
    rows = []
    for st in states:
        rows.append([float(st.sigma_sq)]
                    + [float(v) for v in st.point]
                    + [float(np.linalg.norm(st.drift)),
                       float(st.grad_norm),
                       float(np.linalg.norm(st.B_term))])
    write_csv(csv_path, path_trace_header(d), rows)


def _json_companion(csv_path):
    s = str(csv_path)
    return s[:-4] + ".json" if s.endswith(".csv") else s + ".json"
