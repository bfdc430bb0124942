"""forge: index, refine, generate, build DPO pairs and evaluate."""

from __future__ import annotations

import argparse
import logging
import sys

from rankcot.config import load_config
from rankcot.errors import ForgeError
from rankcot.pipeline import Runner
from rankcot.types import GENERATION_METHODS, REFINEMENT_METHODS

log = logging.getLogger("rankcot")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. retrieval.k=20 (repeatable)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("index", parents=[common], help="build the BM25 index")
    p = sub.add_parser("refine", parents=[common], help="refine retrieved documents for every query")
    p.add_argument("--method", required=True, choices=REFINEMENT_METHODS)
    p = sub.add_parser("generate", parents=[common], help="answer every query from its refinement")
    p.add_argument("--method", required=True, choices=GENERATION_METHODS)
    sub.add_parser("build-dpo", parents=[common], help="build DPO preference data")
    p = sub.add_parser("evaluate", parents=[common], help="score generations and write the report")
    p.add_argument("--generations", nargs="+", help="generation JSONL files (default: all under out_dir)")
    p.add_argument("--closed-book", help="closed-book generation JSONL")
    p = sub.add_parser("consistency", parents=[common], help="repeated-sampling QA consistency")
    p.add_argument("--method", required=True, choices=GENERATION_METHODS)
    p.add_argument("-n", "--n", type=int, dest="n", help="samples per query (default 300)")
    p.add_argument("--temperature", type=float)
    p.add_argument("--limit", type=int, help="only the first N queries")
    sub.add_parser("report", parents=[common], help="print the text table of an existing report")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        config = load_config(args.config, overrides)
        runner = Runner(config)
        if args.command == "index":
            runner.index()
        elif args.command == "refine":
            runner.refine(args.method)
        elif args.command == "generate":
            runner.generate(args.method)
        elif args.command == "build-dpo":
            runner.build_dpo()
        elif args.command == "evaluate":
            runner.evaluate(args.generations, args.closed_book)
            print(runner.report(), end="")
        elif args.command == "consistency":
            runner.consistency(args.method, args.n, args.temperature, args.limit)
        elif args.command == "report":
            print(runner.report(), end="")
    except ForgeError as exc:
        log.error("%s", exc)
        print(f"forge {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
