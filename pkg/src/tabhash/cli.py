"""Command-line front end: parse descriptors, run operations, emit CSV/JSON.

Exit codes: 0 success, 1 check failure, 2 usage error, 3 budget exceeded.
Every run prints a JSON summary embedding its full option set and a config
hash; feeding that summary back through --config replays the run and
reproduces the CSV byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import bounds, experiments, moments
from .tabulation import (DescriptorError, EnumerationBudgetError, SchemeParams,
                         build_hash, build_sign, parse_scheme, parse_seed)
from .values import parse_value

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(stream, rows, columns, config_hash=None):
    if config_hash is not None:
        stream.write(f"# config_hash={config_hash}\n")
    stream.write(",".join(columns) + "\n")
    for row in rows:
        stream.write(",".join(fmt(row.get(col, "")) for col in columns) + "\n")


def emit(args, rows, columns, extra=None):
    # threads is an execution detail with no effect on results, so it stays
    # out of the replay config and its hash
    options = {k: v for k, v in sorted(vars(args).items())
               if k not in ("func", "out", "config", "threads")
               and not k.startswith("_") and v is not None}
    options["command"] = args.command
    digest = hashlib.sha256(
        json.dumps(options, sort_keys=True).encode()).hexdigest()[:16]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(fh, rows, columns, digest)
    else:
        write_csv(sys.stdout, rows, columns, digest)
    summary = dict(command=args.command, options=options, config_hash=digest,
                   rows=len(rows))
    if extra:
        summary.update(extra)
    summary["wall_time_s"] = round(time.perf_counter() - args._t0, 3)
    print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def _threads(args):
    env = os.environ.get("TABHASH_THREADS")
    if args.threads is not None:
        return args.threads
    if env:
        return max(1, int(env))
    return 1


def _p_list(value):
    try:
        if isinstance(value, (int, float)):
            ps = (float(value),)
        elif isinstance(value, (list, tuple)):
            ps = tuple(float(x) for x in value)
        else:
            ps = tuple(float(x) for x in value.split(",") if x.strip())
    except (ValueError, AttributeError) as exc:
        raise DescriptorError(f"bad moment list {value!r}") from exc
    if not ps or any(p < 2 for p in ps):
        raise DescriptorError("moment orders must be reals >= 2")
    return ps


# ---------------------------------------------------------------------------
# subcommands


def cmd_hash(args):
    spec = parse_scheme(args.scheme)
    seed = parse_seed(args.seed)
    hasher = build_hash(spec, seed)
    if args.keys:
        keys = np.array([int(x, 0) for x in args.keys.split(",")], dtype=np.uint64)
    else:
        keys = np.arange(args.n_keys, dtype=np.uint64)
    values = hasher.hash_array(keys)
    rows = [dict(key=int(k), hash=int(v)) for k, v in zip(keys, values)]
    columns = ["key", "hash"]
    if args.sign:
        signer = build_sign(spec, seed, hasher)
        signs = signer.sign_array(keys)
        for row, s in zip(rows, signs):
            row["sign"] = int(s)
        columns.append("sign")
    return emit(args, rows, columns)


def cmd_moments(args):
    spec = parse_scheme(args.scheme)
    vf = parse_value(args.value, spec.params)
    req = moments.MomentRequest(
        scheme=args.scheme, values=vf, p_list=_p_list(args.p), mode=args.mode,
        samples=args.samples, base_seed=parse_seed(args.seed),
        sign_mode=args.sign_mode, threads=_threads(args))
    if args.mode == "exact":
        report = moments.exact_moments(req)
    else:
        report = moments.monte_carlo_moments(req)
    columns = ["scheme", "mode", "sign_mode", "samples", "base_seed", "p",
               "estimate", "std_error", "bound", "ratio"]
    return emit(args, report.csv_rows(), columns,
                extra=dict(report=json.loads(report.to_json())))


def cmd_bounds(args):
    spec = parse_scheme(args.scheme)
    vf = parse_value(args.value, spec.params)
    rows = bounds.bound_table_rows(_p_list(args.p), vf.stats(), spec.params, spec.kind)
    return emit(args, rows, ["p", "M", "sigma2", "case_id", "psi", "bound", "gamma_p"])


def cmd_sweep(args):
    grid = experiments.standard_corpus() if args.grid == "std" else experiments.small_corpus()
    p_list = _p_list(args.p) if args.p else None
    rows = experiments.run_bound_sweep(args.theorem, grid, p_list, args.samples,
                                       parse_seed(args.seed), _threads(args))
    columns = ["theorem", "c", "k", "l", "value", "n_support", "p", "estimate",
               "std_error", "bound", "ratio", "reference", "ratio_ref", "gamma_p",
               "samples", "base_seed"]
    return emit(args, rows, columns)


def cmd_lowerbound(args):
    spec = parse_scheme(args.scheme)
    if spec.kind != "simple":
        raise DescriptorError("the adversarial instance targets simple schemes")
    rows = experiments.run_lower_bound_sweep(spec.params, _p_list(args.p),
                                             args.samples, parse_seed(args.seed),
                                             _threads(args))
    columns = ["c", "k", "l", "p", "gamma", "width", "n_support", "estimate",
               "std_error", "reference", "ratio", "samples", "base_seed"]
    return emit(args, rows, columns)


def cmd_minhash(args):
    config = experiments.KPartitionConfig(
        n_balls=args.n, red_fraction=args.f, k_bins=args.bins, scheme=args.scheme,
        trials=args.trials, base_seed=parse_seed(args.seed))
    report = experiments.minhash_kpartition(config)
    rows = [dict(trial=t, estimate=report["estimates"][t], error=report["errors"][t],
                 mask_count=int(report["mask_counts"][t]),
                 mask_within_band=bool(report["mask_within_band"][t]))
            for t in range(config.trials)]
    extra = dict(actual_red_fraction=report["actual_red_fraction"],
                 mask_zero_bits=report["mask_zero_bits"],
                 expected_mask_count=report["expected_mask_count"],
                 bins_within_regime=report["bins_within_regime"])
    return emit(args, rows, ["trial", "estimate", "error", "mask_count",
                             "mask_within_band"], extra=extra)


def cmd_bench(args):
    rows = []
    if args.compare_backends:
        for row in experiments.backend_bench(n_keys=args.n_keys):
            rows.append({**dict(workload="", ns_per_key="", seconds=""), **row})
        columns = ["backend", "workload", "ns_per_key", "seconds"]
    else:
        res = experiments.throughput_bench(n_keys=args.n_keys)
        rows = [res]
        columns = ["backend", "n_keys", "simple_ns_per_key", "mixed_ns_per_key",
                   "mixed_over_simple", "table_bytes"]
    return emit(args, rows, columns)


# ---------------------------------------------------------------------------
# selftest


def _selftest_checks(quick, inject_fault):
    from .tabulation import SimpleTabHash, TabulationTable
    from .values import make_single_bin

    checks = []

    def envelope_grid():
        rng = np.random.default_rng(7)
        for _ in range(2000):
            p = float(rng.uniform(2, 64))
            ratio = 10.0 ** rng.uniform(-8, 8)
            val = bounds.envelope(p, 1.0, ratio)
            sup = bounds.envelope_sup(p, 1.0, ratio)
            if abs(val - sup) > 1e-9 * val:
                return False, f"sup form mismatch at p={p}, ratio={ratio}"
            if not 0.5 * math.sqrt(p * ratio) <= val * (1 + 1e-12):
                return False, "lower sandwich violated"
        return True, "2000 random points"

    def xor_homomorphism():
        from .tabulation import PositionCharSet

        params = SchemeParams(4, 3, 8)
        h = SimpleTabHash.from_seed(params, 42)
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = PositionCharSet((rng.integers(0, 3), rng.integers(0, 16))
                                for _ in range(rng.integers(0, 5)))
            b = PositionCharSet((rng.integers(0, 3), rng.integers(0, 16))
                                for _ in range(rng.integers(0, 5)))
            if h.extended_hash(a ^ b) != h.extended_hash(a) ^ h.extended_hash(b):
                return False, "extended hash is not XOR-linear"
        return True, "200 random set pairs"

    def exact_oracle():
        vf = make_single_bin(np.ones(1), 0, 2, np.arange(1, dtype=np.uint64))
        req = moments.MomentRequest("simple:k=1,c=1,l=1", vf, (2.0, 4.0))
        rep = moments.exact_moments(req)
        ok = (abs(rep.entries[0].estimate - 0.5) < 1e-12
              and abs(rep.entries[1].estimate - 0.5) < 1e-12)
        return ok, f"norms {rep.entries[0].estimate:.3f}, {rep.entries[1].estimate:.3f}"

    def table_determinism():
        # negative control: the fault swaps in a corrupted seed, which the
        # reproducibility comparison must catch
        a = TabulationTable(4, 8, 16, seed=12345, tag=1)
        b = TabulationTable(4, 8, 16, seed=12345 + (1 if inject_fault else 0), tag=1)
        ok = np.array_equal(a.entries, b.entries)
        return ok, "rebuilt tables match" if ok else "rebuilt tables differ"

    def symmetrization():
        spec = parse_scheme("simple:k=1,c=1,l=1")
        vf = make_single_bin(np.ones(2), 0, 2, np.arange(2, dtype=np.uint64))
        rows = moments.symmetrization_check(vf, spec, (2, 4))
        return all(r["holds"] for r in rows), f"{len(rows)} moment orders"

    def oracle_equivalence():
        spec = parse_scheme("simple:k=2,c=2,l=2")
        vf = make_single_bin(np.ones(8), 0, 4, np.arange(8, dtype=np.uint64))
        req = moments.MomentRequest("simple:k=2,c=2,l=2", vf, (2.0, 4.0),
                                    mode="monte_carlo", samples=20000, base_seed=11)
        exact = moments.exact_moments(
            moments.MomentRequest("simple:k=2,c=2,l=2", vf, (2.0, 4.0)))
        mc = moments.monte_carlo_moments(req)
        for e, m_ in zip(exact.entries, mc.entries):
            if abs(m_.estimate - e.estimate) > 4 * m_.std_error:
                return False, f"p={e.p} off by more than 4 SE"
        return True, "p in (2, 4) within 4 SE"

    def independence():
        rep = experiments.independence_test(seeds=2000)
        ok = (rep["three_wise"]["uniform"] and rep["xor4_fraction"]["simple"] == 1.0
              and rep["xor4_fraction"]["mixed"] < 0.5)
        return ok, f"mixed xor4 fraction {rep['xor4_fraction']['mixed']:.3f}"

    checks = [("envelope_grid", envelope_grid), ("xor_homomorphism", xor_homomorphism),
              ("table_determinism", table_determinism), ("exact_oracle", exact_oracle),
              ("symmetrization", symmetrization)]
    if not quick:
        checks += [("oracle_equivalence", oracle_equivalence),
                   ("independence", independence)]
    return checks


def cmd_selftest(args):
    failures = 0
    for name, fn in _selftest_checks(args.quick, args.inject_fault):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        print(f"{'PASS' if ok else 'FAIL'}  {name:<20} {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"FAILED: {failures} failing check(s)")
    else:
        print("OK: all checks passed")
    return EXIT_OK if failures == 0 else EXIT_CHECK


# ---------------------------------------------------------------------------
# parser


def build_parser(defaults=None):
    parser = argparse.ArgumentParser(prog="tabhash", description=__doc__)
    parser.add_argument("--config", help="JSON/TOML file with command and options")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--seed", default="0", help="64-bit base seed (decimal or 0x-hex)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (TABHASH_THREADS overrides the default)")

    p = sub.add_parser("hash", help="hash a key stream")
    p.add_argument("--scheme")
    p.add_argument("--keys", help="comma-separated key list")
    p.add_argument("--n-keys", type=int, default=16)
    p.add_argument("--sign", action="store_true")
    common(p)
    p.set_defaults(func=cmd_hash)

    p = sub.add_parser("moments", help="exact or Monte Carlo central moments")
    p.add_argument("--scheme")
    p.add_argument("--value")
    p.add_argument("--p", default="2,4,8")
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--sign-mode", choices=("none", "simple", "mixed"), default="none")
    common(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("bounds", help="envelope and bound table for an instance")
    p.add_argument("--scheme")
    p.add_argument("--value")
    p.add_argument("--p", default="2,4,8,16,32")
    common(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("sweep", help="bound-versus-empirical ratio sweep")
    p.add_argument("--theorem", choices=("fully_random", "simple", "mixed"))
    p.add_argument("--grid", choices=("std", "small"), default="std")
    p.add_argument("--p", default=None)
    p.add_argument("--samples", type=int, default=3000)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lowerbound", help="adversarial lower-bound instance sweep")
    p.add_argument("--scheme", default="simple:k=5,c=2,l=1")
    p.add_argument("--p", default="2,4,8,12,16")
    p.add_argument("--samples", type=int, default=200000)
    common(p)
    p.set_defaults(func=cmd_lowerbound)

    p = sub.add_parser("minhash", help="k-partition MinHash study")
    p.add_argument("--n", type=int, default=1 << 16)
    p.add_argument("--f", type=float, default=1.0 / 3.0)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--scheme", default="mixed:k=8,c=2,d=1,l=32")
    p.add_argument("--trials", type=int, default=100)
    common(p)
    p.set_defaults(func=cmd_minhash)

    p = sub.add_parser("bench", help="hashing throughput")
    p.add_argument("--n-keys", type=int, default=1 << 20)
    p.add_argument("--compare-backends", action="store_true")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run the invariant suite")
    p.add_argument("--quick", action="store_true", help="enumeration-only subset")
    p.add_argument("--inject-fault", action="store_true",
                   help="negative control: corrupt an input and expect failure")
    common(p)
    p.set_defaults(func=cmd_selftest)

    if defaults:
        cleaned = {k.replace("-", "_"): v for k, v in defaults.items()
                   if k != "command"}
        # sub-parser defaults shadow the parent namespace, so set them everywhere
        parser.set_defaults(**cleaned)
        for sp in sub.choices.values():
            sp.set_defaults(**cleaned)
    return parser


def _load_config(path):
    if path.endswith(".toml"):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib

        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        doc = json.load(fh)
    if "options" in doc:  # replaying an emitted summary
        merged = dict(doc["options"])
        merged.setdefault("command", doc.get("command"))
        return merged
    return doc


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    config = None
    if "--config" in argv:
        at = argv.index("--config")
        try:
            config = _load_config(argv[at + 1])
        except (OSError, IndexError, ValueError) as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_USAGE
        del argv[at:at + 2]
        if config.get("command") and (not argv or argv[0].startswith("-")):
            argv = [str(config["command"])] + argv
    parser = build_parser(config)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    required = {"hash": ("scheme",), "moments": ("scheme", "value"),
                "bounds": ("scheme", "value"), "sweep": ("theorem",)}
    for name in required.get(args.command, ()):
        if getattr(args, name, None) is None:
            print(f"error: {args.command} requires --{name}", file=sys.stderr)
            return EXIT_USAGE
    args._t0 = time.perf_counter()
    try:
        return args.func(args)
    except EnumerationBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except DescriptorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
