"""Command-line entry point: search, bench, bruteforce, bounds, eval."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import DEFAULTS, ConfigError, read_config
from .execution import InfrastructureError, SimExecutor, brute_force_optimum, world_from_config
from .primitives import DatasetError, load_dataset, space_from_config
from .similarity import METRICS, make_evaluator, metric_config_from_dict

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_CONFIG = 4
EXIT_RUNTIME = 5

EXIT_CODES_HELP = """\
exit status:
  0  success
  2  usage error (unknown flag, missing argument)
  3  input file missing or unreadable
  4  invalid config, world, dataset or parameter value
  5  executor infrastructure error (run or bench aborted)
"""


class _Fail(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _load(path: str):
    try:
        return read_config(path)
    except OSError as exc:
        raise _Fail(EXIT_FILE, f"cannot read {path}: {exc.strerror or exc}") from exc


def _load_world(path: str):
    return world_from_config(_load(path), Path(path).parent)


def _write_summary(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def cmd_search(args) -> int:
    from .mcts import SearchConfig, run_search, write_records_csv, write_records_jsonl

    cfg = _load(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{args.config}: search config must be a mapping")
    search_cfg = dict(cfg.get("search", {}))
    config = SearchConfig.from_dict(search_cfg, seed=args.seed)
    metric_cfg = metric_config_from_dict(cfg.get("metric"))
    evaluator = make_evaluator(cfg.get("metric_name", "sfe"), metric_cfg)

    if args.world:
        world = _load_world(args.world)
        space, data = world.space, list(world.tasks)
    else:
        world = None
        try:
            data = load_dataset(args.dataset)
        except FileNotFoundError as exc:
            raise _Fail(EXIT_FILE, str(exc)) from exc
        if "primitives" in cfg:
            space = space_from_config(cfg["primitives"])
        elif "space" in cfg:
            space = space_from_config(_load(str(Path(args.config).parent / cfg["space"])))
        else:
            raise ConfigError("--dataset needs 'primitives' or 'space' in the config")

    if args.executor == "sim":
        if world is None:
            raise ConfigError("the sim executor needs --world")
        executor = SimExecutor(world)
    else:
        from .http_executor import HttpEndpoint, HttpExecutor
        executor = HttpExecutor(HttpEndpoint.from_config(cfg.get("http") or {}), space)

    result = run_search(space, config, executor, evaluator, data, pruning=not args.unpruned)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records_csv(result.records, out.with_name(out.name + ".records.csv"))
    write_records_jsonl(result.records, out.with_name(out.name + ".records.jsonl"))
    summary = result.summary()
    summary["metric"] = asdict(metric_cfg)
    _write_summary(out.with_name(out.name + ".summary.json"), summary)
    flag = " (tree exhausted before budget)" if result.exhausted else ""
    print(f"{','.join(result.best_workflow)} {result.best_mean_reward:.6f}{flag}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_spec_from_config, run_bench, write_report

    spec = bench_spec_from_config(_load(args.spec), Path(args.spec).parent)
    report = run_bench(spec)
    write_report(report, args.out)
    for variant, stats in report.aggregates.items():
        fs = stats["final_similarity"]
        print(f"{variant}: final_similarity mean={fs['mean']:.6f} min={fs['min']:.6f} max={fs['max']:.6f}")
    if report.aborted:
        print(f"bench aborted, partial results written: {report.aborted}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_bruteforce(args) -> int:
    world = _load_world(args.world)
    evaluator = make_evaluator(args.metric)
    try:
        wf, value = brute_force_optimum(world, evaluator, args.l_max)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"{','.join(wf)} {value:.6f}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    from .bounds import bounds_table

    writer = csv.writer(sys.stdout, lineterminator="\n")
    header = ["b", "l_max", "p", "beta", "v_full", "v_eff", "eta_lower", "eta_upper"]
    writer.writerow(header)
    for b in args.b:
        for l_max in args.l_max:
            for p in args.p:
                for beta in args.beta:
                    try:
                        rows = bounds_table(b, l_max, p, beta)
                    except ValueError as exc:
                        raise ConfigError(str(exc)) from exc
                    for row in rows:
                        writer.writerow([row[h] for h in header])
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        candidate = Path(args.candidate).read_text(encoding="utf-8")
        reference = Path(args.reference).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Fail(EXIT_FILE, f"cannot read {exc.filename}: {exc.strerror}") from exc
    evaluator = make_evaluator(args.metric)
    print(f"{evaluator(candidate, reference):.6f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="wfrecon", description="Reconstruct chain workflows from input/output pairs.",
                     epilog=EXIT_CODES_HELP, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("search", help="run one reconstruction search", epilog=EXIT_CODES_HELP, formatter_class=fmt)
    p.add_argument("--config", help="YAML/JSON file with 'search', 'metric', 'http', 'primitives' sections")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--world", help="simulated world file")
    src.add_argument("--dataset", help="JSONL file of {task, output} records")
    p.add_argument("--executor", choices=("sim", "http"), default="sim", help="execution backend (default: sim)")
    p.add_argument("--out", required=True, help="output prefix for .records.csv/.records.jsonl/.summary.json")
    p.add_argument("--seed", type=int, help="override the search seed")
    p.add_argument("--unpruned", action="store_true", help="classic UCT without Red-Black coloring")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bench", help="multi-seed, multi-variant benchmark", epilog=EXIT_CODES_HELP, formatter_class=fmt)
    p.add_argument("--spec", required=True, help="bench spec file")
    p.add_argument("--out", default="bench", help="output prefix (default: bench)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bruteforce", help="exhaustive optimum of a small world", epilog=EXIT_CODES_HELP, formatter_class=fmt)
    p.add_argument("--world", required=True)
    p.add_argument("--l-max", type=int, required=True)
    p.add_argument("--metric", choices=METRICS, default="sfe")
    p.set_defaults(func=cmd_bruteforce)

    p = sub.add_parser("bounds", help="search-volume bounds as CSV", epilog=EXIT_CODES_HELP, formatter_class=fmt)
    p.add_argument("--b", type=int, nargs="+", required=True)
    p.add_argument("--l-max", type=int, nargs="+", required=True)
    p.add_argument("--p", type=float, nargs="+", default=[0.0])
    p.add_argument("--beta", type=float, nargs="+", default=[DEFAULTS["beta"]])
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("eval", help="similarity of a candidate file against a reference file",
                       epilog=EXIT_CODES_HELP, formatter_class=fmt)
    p.add_argument("--metric", choices=METRICS, default="sfe")
    p.add_argument("candidate")
    p.add_argument("reference")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"wfrecon: error: {exc}", file=sys.stderr)
        return exc.status
    except (ConfigError, DatasetError) as exc:
        print(f"wfrecon: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"wfrecon: error: {exc}", file=sys.stderr)
        return EXIT_FILE
    except InfrastructureError as exc:
        print(f"wfrecon: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
