"""Command line harness: run experiment sweeps, emit synthetic data, summarize.

Configuration comes from an INI-style file (key = value under [experiment],
[data], [protocol] and [selector] sections); any flag given on the command
line overrides the file.
"""

import argparse
import configparser
import csv
import sys

from .data import generate_correlated, generate_independent, generate_sparse_mean
from .harness import (
    DataSpec,
    ExperimentConfig,
    emit,
    parse_records,
    run_experiment,
    summarize,
)
from .protocols import ProtocolConfig
from .selectors import SelectorConfig


def _coerce(text: str):
    if text.lower() in ("none", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _section(parser: configparser.ConfigParser, name: str) -> dict:
    if not parser.has_section(name):
        return {}
    return {k: _coerce(v) for k, v in parser.items(name)}


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"config file not found: {path}")
    exp = _section(parser, "experiment")
    data = _section(parser, "data")
    proto = _section(parser, "protocol")
    sel = _section(parser, "selector")

    sweep_values = exp.pop("sweep_values", None)
    if isinstance(sweep_values, str):
        sweep_values = tuple(_coerce(v.strip()) for v in sweep_values.split(","))
    elif sweep_values is not None:
        sweep_values = (sweep_values,)

    selector = SelectorConfig(**sel) if sel else SelectorConfig()
    protocol = ProtocolConfig(selector=selector, **proto)
    data_spec = DataSpec(**data)
    kwargs = dict(exp)
    if sweep_values is not None:
        kwargs["sweep_values"] = sweep_values
    return ExperimentConfig(data=data_spec, protocol=protocol, **kwargs)


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    records = run_experiment(config)
    emit(records, args.format, args.out)
    n_failed = sum(1 for r in records if r.error)
    print(f"wrote {len(records)} records to {args.out} ({n_failed} failed cells)")
    return 0


def cmd_gen_data(args) -> int:
    if args.design == "independent":
        dataset, truth = generate_independent(
            args.n, args.m, args.d, args.s_star, args.coef, args.noise_std, args.seed
        )
    elif args.design == "correlated":
        dataset, truth = generate_correlated(
            args.n, args.m, args.d, args.s_star, args.coef, args.noise_std,
            args.corr_dims, args.seed,
        )
    else:
        dataset, truth = generate_sparse_mean(
            args.n, args.m, args.d, args.s_star, args.coef, args.noise_std, args.seed
        )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "y"] + [f"x{j}" for j in range(dataset.d)])
        for shard in dataset.shards:
            for row in range(shard.m):
                writer.writerow(
                    [shard.user_id, repr(float(shard.y[row]))]
                    + [repr(float(v)) for v in shard.X[row]]
                )
    print(
        f"wrote {sum(s.m for s in dataset.shards)} rows "
        f"({dataset.n} users, d={dataset.d}, support={list(map(int, truth.support))}) to {args.out}"
    )
    return 0


def cmd_summarize(args) -> int:
    rows = summarize(parse_records(args.records))
    if not rows:
        print("no records")
        return 1
    cols = list(rows[0].keys())
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {len(rows)} summary rows to {args.out}")
    else:
        print("\t".join(cols))
        for row in rows:
            print("\t".join(f"{row.get(c, ''):.6g}" if isinstance(row.get(c), float)
                            else str(row.get(c, "")) for c in cols))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uldpreg",
        description="User-level locally private sparse regression experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the sweep described by a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default="records.csv")
    p_run.add_argument("--format", choices=("csv", "json"), default="csv")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen-data", help="emit a synthetic dataset as CSV")
    p_gen.add_argument("--design", choices=("independent", "correlated", "sparse_mean"),
                       default="independent")
    p_gen.add_argument("--n", type=int, default=400)
    p_gen.add_argument("--m", type=int, default=100)
    p_gen.add_argument("--d", type=int, default=256)
    p_gen.add_argument("--s-star", type=int, default=8)
    p_gen.add_argument("--coef", type=float, default=0.2)
    p_gen.add_argument("--noise-std", type=float, default=1.0)
    p_gen.add_argument("--corr-dims", type=int, default=50)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_data)

    p_sum = sub.add_parser("summarize", help="quantile table from a records CSV")
    p_sum.add_argument("records")
    p_sum.add_argument("--out", default=None)
    p_sum.set_defaults(func=cmd_summarize)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
