"""Command-line front end: scenario generation, recall runs, I/O experiments.

Subcommands:

* ``gen-stream``   - build a drifting scenario from a vector file or a
  synthetic Gaussian mixture and write it (plus its fvecs) to disk.
* ``bench-recall`` - replay a scenario against one or more quantizers and
  emit per-step recall and disk-traffic columns as CSV.
* ``bench-io``     - measure the single-insert disk cost of the tree
  quantizer versus the re-clustering baseline across dataset sizes.

Every command is deterministic given ``--seed``; output files start with
provenance comment lines. Exit codes: 0 success, 2 configuration error,
3 data/file error. A flat ``key = value`` config file may supply defaults;
explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from . import dataio, stream
from .quadsketch import QuadSketch, scale_to_grid
from .store import DiskStore

RECALL_METHODS = ("codeq", "frozenpq", "rebuildpq", "onlinepq", "dedriftpq", "quadsketch")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_config_file(path):
    """Flat TOML-style table: `key = value` lines, # comments."""
    values = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected `key = value`")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        raw = raw.strip("\"'")
        if raw.lower() in ("true", "false"):
            values[key] = raw.lower() == "true"
        else:
            try:
                values[key] = int(raw)
            except ValueError:
                try:
                    values[key] = float(raw)
                except ValueError:
                    values[key] = raw
    return values


def _build_parser():
    parser = argparse.ArgumentParser(prog="streamquant", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key = value file with defaults; flags win")
    sub = parser.add_subparsers(dest="command", required=True)
    parser._streamquant_subparsers = []

    gen = sub.add_parser("gen-stream", help="construct a drifting scenario")
    gen.add_argument("--input", help="vector file (.fvecs/.bvecs/.npy)")
    gen.add_argument("--synthetic-n", type=int, help="generate this many synthetic points instead")
    gen.add_argument("--synthetic-dim", type=int, default=16)
    gen.add_argument("--synthetic-clusters", type=int, default=10)
    gen.add_argument("--clusters", type=int, default=10, help="scenario clustering c")
    gen.add_argument("--n0", type=float, default=0.1, help="initial size; fraction if < 1")
    gen.add_argument("--fq", type=float, default=0.1)
    gen.add_argument("--fd", type=float, default=1.0)
    gen.add_argument("--tau", type=int, default=10)
    gen.add_argument("--alpha", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="scenario file to write (JSON lines)")

    rec = sub.add_parser("bench-recall", help="replay a scenario and record recall")
    rec.add_argument("--scenario", required=True)
    rec.add_argument("--method", default="codeq",
                     help=f"comma-separated subset of {','.join(RECALL_METHODS)}")
    rec.add_argument("--blocks", type=int, default=8, help="product blocks M")
    rec.add_argument("--bits", type=int, default=12, help="bits per block L")
    rec.add_argument("--k", type=int, default=10)
    rec.add_argument("--kprime", type=int, default=50)
    rec.add_argument("--seed", type=int, default=0)
    rec.add_argument("--normalize-rebuild", action="store_true",
                     help="divide recall columns by a fresh-rebuild reference run")
    rec.add_argument("--out", required=True)

    io = sub.add_parser("bench-io", help="single-insert disk cost vs dataset size")
    io.add_argument("--sizes", default="1000,10000,100000")
    io.add_argument("--bits", default="4,6", help="comma-separated L values")
    io.add_argument("--blocks", type=int, default=8)
    io.add_argument("--dim", type=int, default=96)
    io.add_argument("--trials", type=int, default=10)
    io.add_argument("--input", help="optional vector file to sample instead of synthetic data")
    io.add_argument("--seed", type=int, default=0)
    io.add_argument("--out", required=True)
    parser._streamquant_subparsers = [gen, rec, io]
    return parser


def _provenance(args, command, extra=None):
    out = {"tool": f"streamquant {__version__}", "command": command, "seed": args.seed}
    if extra:
        out.update(extra)
    return out


def cmd_gen_stream(args) -> int:
    if args.input:
        try:
            X = dataio.load_vectors(args.input).astype(float)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot load {args.input}: {e}") from e
    elif args.synthetic_n:
        X, _ = stream.make_gaussian_mixture(
            args.synthetic_n, args.synthetic_dim, args.synthetic_clusters, args.seed
        )
    else:
        raise ConfigError("gen-stream needs --input or --synthetic-n")
    n0 = args.n0
    if n0 <= 0:
        raise ConfigError("--n0 must be positive")
    n0 = int(round(n0 * len(X))) if n0 < 1 else int(n0)
    try:
        scenario = stream.construct_stream(
            X, c=args.clusters, n0=n0, f_q=args.fq, tau=args.tau,
            alpha=args.alpha, f_d=args.fd, seed=args.seed,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    dataio.scenario_save(scenario, args.out)
    print(f"wrote {args.out} ({scenario.steps} steps, {len(X)} vectors)")
    return 0


class _QuadSketchAdapter:
    """Quantizer-shaped wrapper so the sketch can join recall runs (k = 1)."""

    kind = "quadsketch"

    def __init__(self, X0, ids, seed, store):
        scaled, phi = scale_to_grid(X0)
        self._scale = np.linalg.norm(scaled[0]) / np.linalg.norm(X0[0]) if np.linalg.norm(X0[0]) else 1.0
        self.store = store
        self.qs = QuadSketch.build(scaled, eps=0.5, delta=0.1, phi=phi, seed=seed, store=store, ids=ids)
        self._phi = phi

    def insert(self, x, point_id=None):
        return self.qs.insert(np.asarray(x, dtype=float) * self._scale, point_id=point_id)

    def delete(self, point_id):
        self.qs.delete(point_id)

    def knn_query(self, q, k):
        if k != 1:
            raise ConfigError("quadsketch answers nearest-neighbor queries only; use --k 1 --kprime 1")
        pid = self.qs.query(np.asarray(q, dtype=float) * self._scale)
        return [(pid, float("nan"))]


def _build_for(method, scenario, args, seed):
    X0 = scenario.X[scenario.initial_ids]
    store = DiskStore()
    if method == "quadsketch":
        if args.k != 1 or args.kprime != 1:
            raise ConfigError("quadsketch supports only --k 1 --kprime 1 (blocks/bits are ignored)")
        if len(scenario.X) > 20000:
            raise DataError("quadsketch recall runs are desk-scale; use <= 20k vectors")
        return _QuadSketchAdapter(X0, scenario.initial_ids, seed, store)
    try:
        return stream.build_method(method, X0, scenario.initial_ids, args.blocks, args.bits, seed, store=store)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def cmd_bench_recall(args) -> int:
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    for m in methods:
        if m not in RECALL_METHODS:
            raise ConfigError(f"unknown method {m!r}; expected subset of {RECALL_METHODS}")
    if not 1 <= args.k <= args.kprime:
        raise ConfigError("need 1 <= k <= kprime")
    try:
        scenario = dataio.scenario_load(args.scenario)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot load scenario {args.scenario}: {e}") from e
    gt = stream.scenario_ground_truth(scenario, args.k)
    reports = []
    for method in methods:
        quant = _build_for(method, scenario, args, args.seed)
        reports.append(stream.run_scenario(quant, scenario, args.k, args.kprime, gt=gt, method=method))
    normalize_by = None
    if args.normalize_rebuild:
        ref = _build_for("rebuildpq", scenario, args, args.seed)
        normalize_by = stream.run_scenario(ref, scenario, args.k, args.kprime, gt=gt, method="rebuildpq")
        reports.append(normalize_by)
    prov = _provenance(args, "bench-recall", {
        "scenario": os.path.basename(args.scenario),
        "methods": "+".join(m.method for m in reports),
        "blocks": args.blocks, "bits": args.bits, "k": args.k, "kprime": args.kprime,
        "normalize_rebuild": args.normalize_rebuild,
    })
    dataio.write_recall_csv(args.out, reports, prov, normalize_by=normalize_by)
    print(f"wrote {args.out} ({sum(r.steps for r in reports)} rows)")
    return 0


def cmd_bench_io(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        l_values = [int(s) for s in args.bits.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --sizes/--bits: {e}") from e
    data = None
    if args.input:
        try:
            data = dataio.load_vectors(args.input).astype(float)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot load {args.input}: {e}") from e
    try:
        rows = stream.io_cost_experiment(
            sizes, l_values, M=args.blocks, d=args.dim,
            trials=args.trials, seed=args.seed, data=data,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    prov = _provenance(args, "bench-io", {
        "sizes": args.sizes, "bits": args.bits, "blocks": args.blocks,
        "dim": args.dim, "trials": args.trials,
    })
    dataio.write_io_csv(args.out, rows, prov)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    prelim, _ = parser.parse_known_args(argv)
    if getattr(prelim, "config", None):
        try:
            defaults = _parse_config_file(prelim.config)
        except ConfigError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        except DataError as e:
            print(f"error: {e}", file=sys.stderr)
            return 3
        parser.set_defaults(**defaults)
        for sub in parser._streamquant_subparsers:
            sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-stream":
            return cmd_gen_stream(args)
        if args.command == "bench-recall":
            return cmd_bench_recall(args)
        if args.command == "bench-io":
            return cmd_bench_io(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
