"""Command-line entry point ``oseenlab``.

Exit status: 0 when every check passes, 1 when a check fails, 2 for an
invalid configuration or usage error.
"""

import argparse
import json
import sys
from pathlib import Path

import scipy.fft as sfft

from .scenarios import (SCENARIOS, CONFIG_SCHEMA, ConfigError, ScenarioConfig, run_scenario,
                        OUTPUT_ENV)

# reduced grids for a fast end-to-end pass over every scenario
QUICK = {
    "grid": {"N_xi": 64, "N_z": 4},
    "overrides": {
        "attraction": {"tau_end": 4.0},
        "biot-savart-audit": {"params": {"n_fields": 8}},
        "estimate-audit": {"params": {"pq": [[2.0, 2.0]]}},
    },
}
SUITES = ("all", "quick") + tuple(SCENARIOS)


def _table():
    rows = []
    for name, d in SCENARIOS.items():
        dflt = ", ".join(f"{k}={v}" for k, v in d["defaults"].items() if k != "controls")
        rows.append((name, d["exercises"], dflt))
    return rows


def cmd_list(args):
    if args.json:
        print(json.dumps({"scenarios": {k: v for k, v in SCENARIOS.items()},
                          "config_schema": CONFIG_SCHEMA}, indent=2, sort_keys=True))
        return 0
    w = max(len(r[0]) for r in _table())
    for name, ex, dflt in _table():
        print(f"{name:<{w}}  {ex}")
        print(f"{'':<{w}}  defaults: {dflt}")
    return 0


def _load_config(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _apply_common(d, args):
    if args.seed is not None:
        d["seed"] = args.seed
    if args.output_dir:
        d["output_dir"] = str(Path(args.output_dir) / d["scenario"]) if args.multi \
            else args.output_dir
    return d


def _run(dicts, args):
    status = 0
    results = []
    with sfft.set_workers(max(1, args.jobs)):
        for d in dicts:
            cfg = ScenarioConfig.from_dict(d)
            res = run_scenario(cfg)
            for c in res.checks:
                mark = "PASS" if c["passed"] else "FAIL"
                print(f"[{mark}] {cfg.scenario}: {c['name']} (value={c['value']}, "
                      f"threshold={c['threshold']})")
            print(f"{cfg.scenario}: status {res.status}, output {res.output_dir}")
            results.append(res)
            status = max(status, res.status)
    return status


def cmd_simulate(args):
    d = _load_config(args.config)
    args.multi = False
    return _run([_apply_common(d, args)], args)


def cmd_verify(args):
    base = _load_config(args.config) if args.config else {}
    names = list(SCENARIOS) if args.suite in ("all", "quick") else [args.suite]
    args.multi = len(names) > 1
    dicts = []
    for name in names:
        d = {k: v for k, v in base.items() if k != "scenario"}
        d["scenario"] = name
        if args.suite == "quick":
            d.setdefault("grid", dict(QUICK["grid"]))
            for k, v in QUICK["overrides"].get(name, {}).items():
                if k == "params":
                    d.setdefault("params", {}).update(v)
                else:
                    d.setdefault(k, v)
        dicts.append(_apply_common(d, args))
    return _run(dicts, args)


def build_parser():
    p = argparse.ArgumentParser(prog="oseenlab", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ENV} "
                                             "or ./oseenlab-output)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for transforms")
    common.add_argument("--seed", type=int, help="seed for randomized fields")
    sub = p.add_subparsers(dest="command", required=True)
    sl = sub.add_parser("list", help="list scenarios")
    sl.add_argument("--json", action="store_true", help="emit the config JSON schema")
    sl.set_defaults(func=cmd_list)
    ss = sub.add_parser("simulate", parents=[common], help="run one scenario from a config")
    ss.add_argument("--config", required=True)
    ss.set_defaults(func=cmd_simulate)
    sv = sub.add_parser("verify", parents=[common], help="run a verification suite")
    sv.add_argument("--suite", required=True, choices=SUITES)
    sv.add_argument("--config", help="overrides applied to every scenario in the suite")
    sv.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "invalid-config", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
