"""Command-line interface.

Exit codes: 0 success, 2 configuration or input error, 3 at least one run
ended in an anomaly (for example an empty active set).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

import numpy as np

from .certificate import export_certificate, import_certificate
from .model import ConfigError, ContractError, VolumeSpec, stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ANOMALY = 3


def _print_json(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def cmd_run(args) -> int:
    from .bench.runner import ExperimentSpec, run_experiment
    spec = ExperimentSpec.from_dict(_load_json(args.config))
    if args.output:
        spec = ExperimentSpec.from_dict({**spec.to_dict(), "output_dir": args.output})
    agg = run_experiment(spec)
    _print_json({k: agg[k] for k in ("benchmark", "method", "succeeded", "failures",
                                      "regret", "stopping", "anomalies")})
    return EXIT_ANOMALY if agg["anomalies"] else EXIT_OK


def cmd_bench(args) -> int:
    from .bench.functions import BENCHMARKS, DEFAULT_DIM
    analytic = {"needle", "bump"}
    for name in BENCHMARKS:
        kind = "analytic" if name in analytic else "empirical"
        print(f"{name:<12} d={DEFAULT_DIM[name]:<3} lipschitz={kind}")
    return EXIT_OK


def cmd_volume(args) -> int:
    from .volume import estimate_active_set
    snap = _import_cert(args.cert)
    spec = VolumeSpec(method=args.method)
    est = estimate_active_set(snap, spec, stream(args.seed, "volume"))
    _print_json({"volume_fraction": est.volume_fraction,
                 "log_volume_ci": list(est.log_volume_ci), "method": est.method,
                 "anomaly": est.anomaly})
    return EXIT_OK


def cmd_alpha(args) -> int:
    from .bench.alpha import estimate_alpha, load_traces
    traces, d = load_traces(args.traces)
    alpha, (lo, hi) = estimate_alpha(traces, d, seed=args.seed)
    _print_json({"alpha": alpha, "ci": [lo, hi], "runs": len(traces), "d": d})
    return EXIT_OK


def cmd_export_cert(args) -> int:
    path = os.path.join(args.run, "certificate.json")
    snap = _import_cert(path)
    meta = None
    if args.region is not None:
        result = _load_json(os.path.join(args.run, "result.json"))
        regions = {r["id"]: r for r in result.get("regions") or []}
        if args.region not in regions:
            raise ConfigError(f"run has no trust region {args.region}")
        reg = regions[args.region]
        snap = snap.local(np.array(reg["lower"]), np.array(reg["upper"]))
        meta = {"region_id": args.region}
    text = export_certificate(snap, metadata=meta)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    return EXIT_OK


def _import_cert(path):
    if not os.path.exists(path):
        raise ConfigError(f"certificate file {path} not found")
    try:
        return import_certificate(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed certificate {path}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgp", description=(
        "Certificate-guided pruning for noisy Lipschitz maximization. "
        "Worker processes: CGP_THREADS (default 1)."))
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment described by a JSON spec")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="override the spec's output_dir")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="benchmark registry")
    b.add_argument("--list", action="store_true", required=True)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("volume", help="estimate the active-set volume of a certificate")
    v.add_argument("--cert", required=True)
    v.add_argument("--method", default="auto", choices=("auto", "grid", "nested"))
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_volume)

    a = sub.add_parser("alpha", help="estimate alpha from run traces")
    a.add_argument("--traces", required=True)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_alpha)

    e = sub.add_parser("export-cert", help="print a run's certificate")
    e.add_argument("--run", required=True)
    e.add_argument("--region", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_export_cert)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
