"""Command line: ``run <config>``, ``sweep <config> --param P --values ...``, ``report <dir>``."""

import argparse
import json
import sys

from . import experiment


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def main(argv=None):
    ap = argparse.ArgumentParser(prog="marfm", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run a config file or a bundled config name")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: the config's output.dir)")
    run.add_argument("--workers", type=int, default=1)

    sw = sub.add_parser("sweep", help="rerun a config for several values of one field")
    sw.add_argument("config")
    sw.add_argument("--param", required=True, help="dotted field path, e.g. noise.delta")
    sw.add_argument("--values", required=True, nargs="+", type=_value, help="JSON literals")
    sw.add_argument("--out")
    sw.add_argument("--workers", type=int, default=1)

    rep = sub.add_parser("report", help="aggregate metrics.csv files below a directory")
    rep.add_argument("dir")

    sub.add_parser("list", help="names of the bundled configs")

    args = ap.parse_args(argv)
    try:
        if args.cmd == "run":
            rows = experiment.run_experiment(args.config, args.out, args.workers)
        elif args.cmd == "sweep":
            rows = experiment.sweep(args.config, args.param, args.values, args.out, workers=args.workers)
        elif args.cmd == "report":
            print(experiment.report(args.dir))
            return 0
        else:
            print("\n".join(experiment.bundled_configs()))
            return 0
    except experiment.ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error at {path or '<root>'}: {msg}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return 2
    failed = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        print(f"{r['label'] or r['name']}: {r['status']} E_l2={r['E_l2'] or '-'} n_integral={r['n_integral'] or '-'}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
