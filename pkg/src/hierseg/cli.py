"""``hierseg`` command line: phantoms, losses, optimization and evaluation on svol files.

Results go to stdout as JSON; progress logs go to stderr.  Exit codes:
0 success, 1 usage error, 2 bad input data, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .anatomy import derive_regions, lobe_consistency
from .losses import LossConfig, loss_terms, total_loss
from .metrics import count_holes, mapped_dice
from .optimizer import NumericalAbort, OptimizeConfig, grad_check_report, optimize_logits
from .phantom import PhantomSpec, generate_phantom, synthesize_gt_by_distance
from .volume import LabelVolume, ProbabilityField, ScalarField4D, export_slice_pgm, read_svol, write_svol

log = logging.getLogger("hierseg")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _labels(path, semantics: str) -> LabelVolume:
    vol = read_svol(path)
    if not isinstance(vol, LabelVolume):
        raise ValueError(f"{path}: expected a label volume, found a {vol.data.shape[0]}-channel field")
    if vol.semantics != semantics:
        # accept any label file whose ids fit the requested role
        vol = LabelVolume(vol.data, semantics, vol.spacing)
    return vol


def _field(path) -> ScalarField4D:
    vol = read_svol(path)
    if not isinstance(vol, ScalarField4D):
        raise ValueError(f"{path}: expected a real-valued field, found a label volume")
    return vol


def _regions(args):
    return derive_regions(_labels(args.bv, "bv_labels"), _labels(args.lobe, "lobe_labels"))


def _loss_config(args) -> LossConfig:
    return LossConfig(lambda1=args.lambda1, lambda2=args.lambda2, consistency_norm=args.consistency_norm)


# ---------------------------------------------------------------------------
# subcommands


def cmd_phantom(args) -> None:
    spec = PhantomSpec(size=tuple(args.size), seed=args.seed, tube_radius=args.tube_radius,
                       branch_depth=args.branch_depth)
    bundle = generate_phantom(spec)
    bundle.save(args.out_dir)
    out = Path(args.out_dir)
    _emit({
        "bv": str(out / "bv.svol"), "lobe": str(out / "lobe.svol"), "gt": str(out / "gt.svol"),
        "skeleton": str(out / "skeleton.json"), "seed": args.seed, "size": list(spec.size),
        "bv_voxels": int((bundle.bv.data > 0).sum()),
    })


def cmd_synth_gt(args) -> None:
    bv, lobe = _labels(args.bv, "bv_labels"), _labels(args.lobe, "lobe_labels")
    gt = synthesize_gt_by_distance(bv, lobe, threads=args.threads)
    write_svol(gt, args.out)
    _emit({"out": args.out, "lobe_consistency": lobe_consistency(gt, lobe)})


def cmd_loss(args) -> None:
    r = _regions(args)
    cfg = _loss_config(args)
    if args.logits:
        bd = total_loss(_field(args.logits), r, cfg=cfg, threads=args.threads)
    else:
        f = _field(args.probs)
        bd = loss_terms(ProbabilityField(f.data, f.spacing, "probabilities"), r, cfg=cfg, threads=args.threads)
    _emit(bd.to_dict())


def cmd_optimize(args) -> None:
    r = _regions(args)
    cfg = OptimizeConfig(iterations=args.iters, lr=args.lr, momentum=args.momentum, seed=args.seed,
                         init_sigma=args.init_sigma, loss=_loss_config(args), log_period=args.log_period,
                         threads=args.threads)
    trace = optimize_logits(r, cfg=cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text(trace.jsonl())
    write_svol(trace.logits, out / "logits.svol")
    write_svol(trace.partition, out / "partition.svol")
    _emit({"final": trace.breakdowns[-1].to_dict(), "iterations": args.iters,
           "trace": str(out / "trace.jsonl"), "logits": str(out / "logits.svol"),
           "partition": str(out / "partition.svol")})


def cmd_eval(args) -> None:
    pred = _labels(args.pred, "segment_partition")
    gt = _labels(args.structure_gt, "bv_labels")
    doc = {"mapped_dice": mapped_dice(pred, gt).to_dict(),
           "holes": count_holes(pred, threads=args.threads).to_dict()}
    if args.lobe:
        doc["lobe_consistency"] = lobe_consistency(pred, _labels(args.lobe, "lobe_labels"))
    _emit(doc)


def cmd_grad_check(args) -> None:
    rep = grad_check_report(_regions(args), cfg=_loss_config(args), samples=args.samples, seed=args.seed)
    _emit(rep.to_dict())


def cmd_export_slice(args) -> None:
    export_slice_pgm(read_svol(getattr(args, "in")), args.axis, args.index, args.out, args.channel)
    _emit({"out": args.out})


# ---------------------------------------------------------------------------


def _loss_flags(p) -> None:
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--consistency-norm", choices=["mean", "voxel", "sum"], default="mean")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hierseg", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--threads", type=int, default=1, help="worker threads (1 = reference mode)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic lung phantom", allow_abbrev=False)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--size", type=int, nargs=3, default=[48, 48, 48], metavar=("D", "H", "W"))
    p.add_argument("--tube-radius", type=float, default=1.5)
    p.add_argument("--branch-depth", type=int, default=3)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("synth-gt", help="nearest-tree segment ground truth", allow_abbrev=False)
    p.add_argument("--bv", required=True)
    p.add_argument("--lobe", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_gt)

    p = sub.add_parser("loss", help="evaluate the loss breakdown", allow_abbrev=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--logits")
    src.add_argument("--probs")
    p.add_argument("--bv", required=True)
    p.add_argument("--lobe", required=True)
    _loss_flags(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("optimize", help="optimize a free logit field", allow_abbrev=False)
    p.add_argument("--bv", required=True)
    p.add_argument("--lobe", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--init-sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--log-period", type=int, default=50)
    _loss_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="mapped Dice and hole count of a partition", allow_abbrev=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--structure-gt", required=True)
    p.add_argument("--lobe")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference gradient check", allow_abbrev=False)
    p.add_argument("--bv", required=True)
    p.add_argument("--lobe", required=True)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _loss_flags(p)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("export-slice", help="write one slice as a PGM image", allow_abbrev=False)
    p.add_argument("--in", required=True)
    p.add_argument("--axis", choices=["z", "y", "x"], required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_slice)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"hierseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericalAbort as exc:
        print(f"hierseg: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"hierseg: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
