"""Command-line entry point.

    otapfl run CONFIG [--out DIR]
    otapfl check
    otapfl sweep CONFIG --param gamma=0.1,0.5 [--out DIR]
    otapfl replay TRACE_JSON
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

from .config import config_from_dict, config_to_dict, load_config
from .errors import ConfigError
from .protocol import run_experiment
from .results import output_root, replay_trace, write_run
from .selfcheck import run_checks

log = logging.getLogger("otapfl")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_param(spec: str):
    """``"gamma=0.1,0.5"`` -> ``("gamma", [0.1, 0.5])``; dotted keys reach nested sections."""
    if "=" not in spec:
        raise ValueError(f"--param expects key=v1,v2,... got {spec!r}")
    key, values = spec.split("=", 1)
    return key.strip(), [_parse_value(v.strip()) for v in values.split(",") if v.strip()]


def _set(d, dotted, value):
    *path, last = dotted.split(".")
    for p in path:
        d = d.setdefault(p, {})
    d[last] = value


def _progress(row):
    if "global_acc" in row:
        log.info("round %d: global %.4f personal %.4f skipped %d", row["round"], row["global_acc"],
                 row["pers_acc_mean"], row["skipped"])


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    result = run_experiment(cfg, progress=_progress)
    out = write_run(result, args.out)
    print(out)
    return 0


def cmd_check(args) -> int:
    ok = True
    for name, passed, detail in run_checks():
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= passed
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    base = config_to_dict(load_config(args.config))
    grid = [parse_param(p) for p in args.param]
    keys = [k for k, _ in grid]
    root = Path(args.out or output_root())
    runs = []
    for combo in itertools.product(*(vals for _, vals in grid)):
        d = json.loads(json.dumps(base))
        for k, v in zip(keys, combo):
            _set(d, k, v)
        cfg = config_from_dict(d)
        name = "sweep-" + "-".join(f"{k}={v}" for k, v in zip(keys, combo))
        result = run_experiment(cfg, progress=_progress)
        out = write_run(result, root, name)
        runs.append((combo, out, result.final))
        print(out)
    with open(root / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + ["run_dir", "global_acc", "pers_acc_mean", "pers_acc_std"])
        for combo, out, final in runs:
            w.writerow(list(combo) + [out.name, final.get("global_acc"), final.get("pers_acc_mean"),
                                      final.get("pers_acc_std")])
    return 0


def cmd_replay(args) -> int:
    ok, expected, got = replay_trace(args.trace)
    print(f"{'MATCH' if ok else 'MISMATCH'} expected {expected} replayed {got}")
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="otapfl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("config")
    p.add_argument("--out", help="output root (default $OTAPFL_OUT or ./out)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("check", help="gradient and invariant self-test")
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("sweep", help="grid of runs over config values")
    p.add_argument("config")
    p.add_argument("--param", action="append", required=True, help="key=v1,v2 (repeatable)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("replay", help="re-run a traced round and compare digests")
    p.add_argument("trace")
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
