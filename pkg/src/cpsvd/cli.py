"""Command-line entry point: ``cpsvd {calibrate,compress,ablate,oracle}``.

Exit statuses: 0 success, 2 validation error, 3 partial failure, 64 usage error.
Set ``CPSVD_LOG`` (e.g. ``DEBUG``) to change log verbosity.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import oracle as oracle_mod
from .columns import column_losses, search_preserve_count
from .fixtures import toy_model
from .pipeline import VARIANTS, CalibratedModel, ablation_run, compress
from .tensor_io import ManifestError, TensorFormatError, load_manifest, read_tensor, write_tensor
from .whiten import GramMatrix, SingularGramError, accumulate_gram, svd_whitened

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PARTIAL = 3
EXIT_USAGE = 64

log = logging.getLogger("cpsvd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ratio(text):
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"ratio {value} outside [0, 1)")
    return value


def _positive(text):
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive value, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpsvd", description="Column-preserving whitened SVD compression.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cal = sub.add_parser("calibrate", help="accumulate activation batches into a Gram matrix")
    cal.add_argument("--in", dest="inputs", nargs="*", default=[], metavar="PATH")
    cal.add_argument("--out", required=True)

    comp = sub.add_parser("compress", help="compress every module listed in a manifest")
    comp.add_argument("--manifest", required=True)
    comp.add_argument("--ratio", type=_ratio, help="fraction of parameters to remove")
    comp.add_argument("--temp", type=_positive, help="layer softmax temperature")
    comp.add_argument("--jobs", type=int, default=1)
    comp.add_argument("--out", required=True)

    abl = sub.add_parser("ablate", help="compare ablation variants, CSV on stdout or --out")
    src = abl.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--toy", action="store_true", help="use seeded synthetic stacks")
    abl.add_argument("--variants", default=",".join(VARIANTS))
    abl.add_argument("--seeds", type=int, default=1)
    abl.add_argument("--seed", type=int, default=0, help="first fixture seed")
    abl.add_argument("--ratio", type=_ratio)
    abl.add_argument("--jobs", type=int, default=1)
    abl.add_argument("--out")

    orc = sub.add_parser("oracle", help="golden-section search vs exhaustive search on one matrix")
    orc.add_argument("--weight", required=True)
    orc.add_argument("--gram", required=True)
    orc.add_argument("--ratio", type=_ratio, required=True)
    return p


def cmd_calibrate(args) -> int:
    if not args.inputs:
        raise UsageError("calibrate needs at least one --in activation file")
    gram = None
    for path in args.inputs:
        try:
            gram = accumulate_gram(gram, read_tensor(path))
        except ValueError as exc:
            log.error("%s: %s", path, exc)
            return EXIT_VALIDATION
    write_tensor(gram.h, args.out)
    print(f"sample_count {gram.sample_count}")
    return EXIT_OK


def cmd_compress(args) -> int:
    model = CalibratedModel.from_manifest(load_manifest(args.manifest))
    _, report = compress(model, args.out, ratio=args.ratio, temperature=args.temp, jobs=args.jobs)
    tot = report["totals"]
    print(f"params {tot['params_before']} -> {tot['params_after']} (budget {tot['budget']})")
    print(f"loss {tot['loss_before']!r} -> {tot['loss']!r}")
    if report["failures"]:
        log.error("%d module(s) failed: %s", len(report["failures"]), ", ".join(report["failures"]))
        return EXIT_PARTIAL
    return EXIT_OK


def ablation_table(models, variants, ratio=None, jobs=1) -> str:
    """CSV text: one row per (seed, variant) then one median row per variant."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["seed", "variant", "loss", "loss_before", "params_after", "budget"])
    losses = {v: [] for v in variants}
    for label, model in models:
        for v in variants:
            tot = ablation_run(model, v, ratio=ratio, jobs=jobs)["totals"]
            losses[v].append(tot["loss"])
            out.writerow([label, v, repr(tot["loss"]), repr(tot["loss_before"]), tot["params_after"], tot["budget"]])
    for v in variants:
        out.writerow(["median", v, repr(float(np.median(losses[v]))), "", "", ""])
    return buf.getvalue()


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown or not variants:
        raise UsageError(f"unknown variant(s) {unknown}; choose from {', '.join(VARIANTS)}")
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    if args.manifest:
        models = [("-", CalibratedModel.from_manifest(load_manifest(args.manifest)))]
    else:
        models = [(str(s), toy_model(s)) for s in range(args.seed, args.seed + args.seeds)]
    text = ablation_table(models, variants, ratio=args.ratio, jobs=args.jobs)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    w = read_tensor(args.weight)
    h = read_tensor(args.gram)
    m, n = w.shape
    if h.shape != (n, n):
        log.error("gram shape %s does not match weight columns %d", h.shape, n)
        return EXIT_VALIDATION
    gram = GramMatrix(0.5 * (h + h.T))
    budget = m * n - int(np.floor(args.ratio * m * n + 0.5))
    r = budget // (m + n)
    if budget >= m * n:
        print("ratio 0: dense storage fits, nothing to search")
        print("golden delta_r 0 loss 0.0")
        print("exhaustive delta_r 0 loss 0.0")
        return EXIT_OK
    if r > oracle_mod.EXHAUSTIVE_RANK_LIMIT:
        log.error("rank %d exceeds the exhaustive-search limit %d", r, oracle_mod.EXHAUSTIVE_RANK_LIMIT)
        print(f"instance too large for exhaustive search (rank {r} > {oracle_mod.EXHAUSTIVE_RANK_LIMIT})")
        return EXIT_VALIDATION
    order = column_losses(w, gram, svd_whitened(w, gram), r).order
    found = search_preserve_count(w, gram, order, r, budget)
    best_dr, best_loss = oracle_mod.exhaustive_search(w, gram, order, r, budget)
    print(f"budget {budget} base_rank {r}")
    print(f"golden delta_r {found.delta_r} columns {found.c} rank {found.rank} loss {found.loss!r}")
    print(f"exhaustive delta_r {best_dr} loss {best_loss!r}")
    ratio = found.loss / best_loss if best_loss > 0 else 1.0
    print(f"ratio {ratio!r}")
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "compress": cmd_compress, "ablate": cmd_ablate, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("CPSVD_LOG", "").upper() or ("DEBUG" if args.verbose > 1 else "INFO" if args.verbose else "WARNING")
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cpsvd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, TensorFormatError, SingularGramError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        print(f"cpsvd: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
