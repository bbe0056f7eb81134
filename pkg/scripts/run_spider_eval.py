#!/usr/bin/env python3
"""Run an execution-accuracy evaluation over a Spider-format benchmark.

Thin wrapper around `nl2sql eval` with checkpointing and a replay cache
enabled by default, so an interrupted run resumes where it stopped and a
rerun over a warm cache is bit-reproducible.

Example:
    export NL2SQL_API_KEY=...
    python3 scripts/run_spider_eval.py --spider-root /data/spider \
        --model gpt-4o --limit 100 --out runs/dev100
"""

import argparse
import os
import sys

from nl2sql.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--spider-root", required=True,
                        help="directory holding dev.json, tables.json, database/")
    parser.add_argument("--questions", default="dev.json",
                        help="questions file relative to --spider-root")
    parser.add_argument("--model", default=None)
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--limit", type=int, default=None)
    parser.add_argument("--offset", type=int, default=0)
    parser.add_argument("--parallelism", type=int, default=4)
    parser.add_argument("--out", default="eval_out")
    parser.add_argument("--no-correction", action="store_true")
    parser.add_argument("--no-query-plan", action="store_true")
    args = parser.parse_args()

    argv = [
        "eval",
        "--questions", os.path.join(args.spider_root, args.questions),
        "--tables", os.path.join(args.spider_root, "tables.json"),
        "--db-root", os.path.join(args.spider_root, "database"),
        "--parallelism", str(args.parallelism),
        "--out", args.out,
        "--checkpoint", os.path.join(args.out, "checkpoint.jsonl"),
        "--cache-dir", os.path.join(args.out, "cache"),
        "--trace-file", os.path.join(args.out, "traces.jsonl"),
        "--offset", str(args.offset),
    ]
    if args.limit is not None:
        argv += ["--limit", str(args.limit)]
    if args.model:
        argv += ["--model", args.model]
    if args.config:
        argv += ["--config", args.config]
    if args.no_correction:
        argv.append("--no-correction")
    if args.no_query_plan:
        argv.append("--no-query-plan")

    os.makedirs(args.out, exist_ok=True)
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
