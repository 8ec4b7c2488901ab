"""Vector file formats, scenario files, and CSV result emitters.

fvecs/ivecs: per vector, a little-endian int32 dimension header followed by
that many little-endian float32 (resp. int32) values. bvecs: int32 header
followed by that many bytes. Readers and writers round-trip bit-exactly.

Scenario files are JSON lines: a header object with format version, the
construction parameters, and a reference to the vector file, then one line
per step with insert/delete/query id lists.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .stream import StreamScenario

SCENARIO_FORMAT = "streamquant-scenario"
SCENARIO_VERSION = 1


def _read_vec_file(path, dtype, item_size):
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return np.zeros((0, 0), dtype=dtype)
    dim = int(raw[:4].view("<i4")[0])
    if dim <= 0:
        raise ValueError(f"{path}: non-positive dimension header {dim}")
    rec = 4 + dim * item_size
    if raw.size % rec != 0:
        raise ValueError(f"{path}: size {raw.size} not a multiple of record size {rec}")
    n = raw.size // rec
    mat = raw.reshape(n, rec)
    headers = mat[:, :4].copy().view("<i4").ravel()
    if not (headers == dim).all():
        raise ValueError(f"{path}: inconsistent dimension headers")
    body = mat[:, 4:].copy()
    return body.view(dtype).reshape(n, dim)


def fvecs_read(path) -> np.ndarray:
    return _read_vec_file(path, "<f4", 4)


def ivecs_read(path) -> np.ndarray:
    return _read_vec_file(path, "<i4", 4)


def bvecs_read(path) -> np.ndarray:
    return _read_vec_file(path, np.uint8, 1)


def _write_vec_file(path, X, dtype):
    X = np.ascontiguousarray(X, dtype=dtype)
    if X.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, dim = X.shape
    headers = np.full((n, 1), dim, dtype="<i4")
    body = X.view(np.uint8).reshape(n, -1)
    out = np.concatenate([headers.view(np.uint8).reshape(n, 4), body], axis=1)
    out.tofile(path)


def fvecs_write(path, X):
    _write_vec_file(path, X, "<f4")


def ivecs_write(path, X):
    _write_vec_file(path, X, "<i4")


def bvecs_write(path, X):
    _write_vec_file(path, X, np.uint8)


def load_vectors(path) -> np.ndarray:
    """Route by extension: .fvecs, .bvecs, or .npy."""
    path = str(path)
    if path.endswith(".fvecs"):
        return fvecs_read(path)
    if path.endswith(".bvecs"):
        return bvecs_read(path)
    if path.endswith(".npy"):
        return np.load(path)
    raise ValueError(f"unsupported vector file {path!r} (use .fvecs, .bvecs, or .npy)")


# -- scenario files --------------------------------------------------------------


def scenario_save(scenario: StreamScenario, path, vectors_path=None):
    """Write a scenario as JSON lines; vectors go to a sibling fvecs file.

    Vectors are stored as float32. Loading a saved scenario therefore
    yields float32-precision data; runs made from the same saved files are
    bit-reproducible.
    """
    path = str(path)
    if vectors_path is None:
        vectors_path = path + ".fvecs"
    fvecs_write(vectors_path, np.asarray(scenario.X, dtype="<f4"))
    header = {
        "format": SCENARIO_FORMAT,
        "version": SCENARIO_VERSION,
        "seed": scenario.seed,
        "params": scenario.params,
        "vectors": os.path.basename(str(vectors_path)),
        "steps": scenario.steps,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for t in range(scenario.steps):
            row = {
                "t": t,
                "insert_ids": [int(i) for i in scenario.inserts[t]],
                "delete_ids": [int(i) for i in scenario.deletes[t]],
                "query_ids": [int(i) for i in scenario.queries[t]],
            }
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return vectors_path


def scenario_load(path) -> StreamScenario:
    path = str(path)
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != SCENARIO_FORMAT:
            raise ValueError(f"{path}: not a scenario file")
        if header.get("version") != SCENARIO_VERSION:
            raise ValueError(f"{path}: unsupported scenario version {header.get('version')}")
        vectors_path = os.path.join(os.path.dirname(path), header["vectors"])
        X = fvecs_read(vectors_path).astype(float)
        inserts, deletes, queries = [], [], []
        for line in f:
            row = json.loads(line)
            inserts.append(np.asarray(row["insert_ids"], dtype=np.int64))
            deletes.append(np.asarray(row["delete_ids"], dtype=np.int64))
            queries.append(np.asarray(row["query_ids"], dtype=np.int64))
    scenario = StreamScenario(X, inserts, deletes, queries, dict(header["params"]), header["seed"])
    scenario.validate()
    return scenario


# -- CSV emitters ---------------------------------------------------------------


def _write_provenance(f, provenance):
    for key in sorted(provenance):
        f.write(f"# {key}={provenance[key]}\n")


def write_recall_csv(path, reports, provenance=None, normalize_by=None):
    """One row per (method, step). Optional normalization report divides
    recall columns elementwise."""
    with open(path, "w") as f:
        _write_provenance(f, provenance or {})
        cols = [
            "t",
            "vectors_streamed",
            "method",
            "recall_k_at_k",
            "recall_k_at_kprime",
            "read_rounds",
            "words_read",
        ]
        f.write(",".join(cols) + "\n")
        for report in reports:
            norm_k = norm_kp = None
            if normalize_by is not None:
                ref_k = normalize_by.recall_k
                ref_kp = normalize_by.recall_kprime
                norm_k = np.where(ref_k > 0, report.recall_k / np.maximum(ref_k, 1e-12), np.nan)
                norm_kp = np.where(ref_kp > 0, report.recall_kprime / np.maximum(ref_kp, 1e-12), np.nan)
            for t in range(report.steps):
                rk = norm_k[t] if norm_k is not None else report.recall_k[t]
                rkp = norm_kp[t] if norm_kp is not None else report.recall_kprime[t]
                f.write(
                    f"{t},{report.vectors_streamed[t]},{report.method},"
                    f"{rk:.6f},{rkp:.6f},{report.read_rounds[t]},{report.words_read[t]}\n"
                )


def write_io_csv(path, rows, provenance=None):
    with open(path, "w") as f:
        _write_provenance(f, provenance or {})
        f.write("method,n,L,mean_cost,stderr,trials\n")
        for r in rows:
            f.write(
                f"{r['method']},{r['n']},{r['L']},{r['mean_cost']:.6f},{r['stderr']:.6f},{r['trials']}\n"
            )
