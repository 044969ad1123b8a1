"""Command line driver: ``run``, ``validate`` and ``psi``."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .experiments import ConfigError, load_config, run, validate_config, _energy, _tensor, _crystal


def _vec(text):
    try:
        v = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a vector: {text!r}") from None
    if len(v) != 3:
        raise argparse.ArgumentTypeError("expected three components")
    return np.array(v)


def _parser():
    p = argparse.ArgumentParser(prog="crystaldislo",
                                description="Discrete dislocation experiments.")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the experiment named in a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--seed", type=int, default=None)
    v = sub.add_parser("validate", help="check a config file against the schema")
    v.add_argument("--config", required=True)
    s = sub.add_parser("psi", help="line-tension energy of a straight dislocation")
    s.add_argument("--b", type=_vec, required=True, help="Burgers vector, e.g. '0,0,1'")
    s.add_argument("--t", type=_vec, required=True, help="line direction")
    s.add_argument("--config", default=None, help="optional config selecting the elastic tensor")
    return p


def _report_errors(err: ConfigError):
    for field, msg in err.problems:
        print(f"error: {field}: {msg}", file=sys.stderr)


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.cmd == "validate":
        try:
            cfg = load_config(args.config)
        except ConfigError as e:
            _report_errors(e)
            return 2
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        print(json.dumps({"ok": True, "experiment": cfg["experiment"]}))
        return 0
    if args.cmd == "psi":
        from .linetension import LineTension
        try:
            if args.config:
                cfg = load_config(args.config)
            else:
                cfg = validate_config({"experiment": "psi-table"})
        except ConfigError as e:
            _report_errors(e)
            return 2
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        if cfg["energy"].get("kind") in ("isotropic", "cubic"):
            C = _tensor(cfg, None, None)
        else:
            C = _energy(cfg, _crystal({**cfg, "crystal": {"kind": "simple_cubic"}})[0])[1]
        if np.linalg.norm(args.t) == 0:
            print("error: --t must be nonzero", file=sys.stderr)
            return 2
        val = LineTension(C)(args.b, args.t)
        print(json.dumps({"b": args.b.tolist(), "t": args.t.tolist(), "psi": val}))
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        _report_errors(e)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    try:
        summary = run(cfg, args.out, threads=max(1, args.threads), seed=args.seed)
    except Exception as e:  # fixture failures, with module context
        print(f"error: {type(e).__module__}.{type(e).__name__}: {e}", file=sys.stderr)
        return 3
    for c in summary["checks"]:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] criterion {c['criterion']}: {c['check']}")
    return 0 if summary["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
