"""Command line entry point: ``qtci run|validate|demo``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import ConfigError, demo_names, emit, load_demo, parse_config, run


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtci", description="Certified W1, TCI and concentration checks.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--trials", type=int, help="override the number of random trials")
        sp.add_argument("--tol-quadrature", type=float, help="quadrature tolerance for recovery maps")
        sp.add_argument("--allow-large", action="store_true", help="allow total dimension above 2^12")

    r = sub.add_parser("run", help="run a config file")
    r.add_argument("config")
    d = sub.add_parser("demo", help="run a shipped demo config")
    d.add_argument("name", choices=demo_names())
    for sp in (r, d):
        common(sp)
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=["json", "csv"], default="json")
        sp.add_argument("--parallel-trials", type=int, default=1, metavar="N",
                        help="threads for sampling loops (results do not depend on N)")
        sp.add_argument("--timings", action="store_true",
                        help="record wall-clock seconds per task (breaks byte-identical reports)")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    common(v)
    return p


def _load(args):
    text = load_demo(args.name) if args.cmd == "demo" else Path(args.config).read_text()
    cfg = parse_config(text, allow_large=args.allow_large)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed: must be nonnegative")
        cfg.seed = args.seed
        cfg.raw = dict(cfg.raw, seed=args.seed)
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials: must be positive")
        cfg.trials = args.trials
        cfg.raw = dict(cfg.raw, trials=args.trials)
    if args.tol_quadrature is not None:
        if not args.tol_quadrature > 0:
            raise ConfigError("--tol-quadrature: must be positive")
        cfg.tolerances["quadrature"] = args.tol_quadrature
        cfg.raw = dict(cfg.raw, tolerances=dict(cfg.tolerances))
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    if args.cmd == "validate":
        H = cfg.hamiltonian
        print(f"ok: {H.shape.n} sites, d={H.shape.d}, {len(H.terms)} terms, "
              f"{len(cfg.betas)} beta value(s), tasks: {', '.join(cfg.tasks)}")
        return 0
    report = run(cfg, workers=max(1, args.parallel_trials), timings=args.timings)
    data = emit(report, args.format)
    out = args.out or cfg.output
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    s = report["summary"]
    print(f"{s['assertions'] - s['failed']}/{s['assertions']} assertions passed", file=sys.stderr)
    return 0 if s["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
