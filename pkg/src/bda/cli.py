"""Command-line entry point: ``bda <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, pnm
from .checkpoint import CheckpointError
from .dataset import DataError, atomic_write, read_manifest
from .pipeline import NumericalError, TrainConfig
from .synth import SynthConfig, synth_generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
TEST_SEED_OFFSET = 7919

log = logging.getLogger("bda")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(text):
    low = text.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")


def _int_list(text):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _levels(text):
    if text.strip().lower() in ("", "none", "off"):
        return ()
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _common(p, data=True, out=True):
    p.add_argument("--config", type=Path, help="key=value file with training settings")
    p.add_argument("--seed", type=int)
    if data:
        p.add_argument("--data", type=Path, required=True, help="dataset root holding manifest.tsv")
    if out:
        p.add_argument("--out", type=Path, required=True)


def _model_flags(p, stage2):
    p.add_argument("--mff", type=_on_off, help="multi-scale image fusion in the encoder (on|off)")
    if stage2:
        p.add_argument("--cda", type=_levels, help="decoder levels with cross attention, e.g. dconv1,dconv2,dconv3")
        p.add_argument("--cutmix", type=_on_off, help="class-targeted CutMix (on|off)")
        p.add_argument("--difficult-classes", type=_int_list, help="CutMix source classes, e.g. 2,3")
        p.add_argument("--stage1-checkpoint", type=Path, help="initialize shared weights from stage 1")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")


def build_parser():
    p = _Parser(prog="bda", description="Two-stage building damage assessment on pre/post image pairs.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic train/test dataset")
    _common(s, data=False)
    s.add_argument("--num-train", type=int, default=200)
    s.add_argument("--num-test", type=int, default=50)
    s.add_argument("--extent", type=int, default=64)

    s = sub.add_parser("train-seg", help="stage 1: building segmentation from the pre image")
    _common(s)
    _model_flags(s, stage2=False)

    s = sub.add_parser("train-damage", help="stage 2: damage classification from both images")
    _common(s)
    _model_flags(s, stage2=True)

    for name, helptext in (("predict", "write predicted class maps"), ("evaluate", "score a dataset"),
                           ("report", "metrics, confusion table and loss curves")):
        s = sub.add_parser(name, help=helptext)
        _common(s, out=name != "evaluate")
        if name == "evaluate":
            s.add_argument("--out", type=Path)
        s.add_argument("--checkpoint", type=Path, required=True, help="stage-2 checkpoint")
        s.add_argument("--stage1-checkpoint", type=Path, required=True)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable operation")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    return p


def _train_config(args, stage):
    values = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        try:
            values.update(pipeline.parse_config_text(text))
        except ValueError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    for key in ("seed", "epochs", "learning_rate", "mff", "cutmix", "difficult_classes"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "cda", None) is not None:
        values["cda_levels"] = args.cda
    values["stage"] = stage
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_synth(args):
    seed = args.seed or 0
    for split, n, s in (("train", args.num_train, seed), ("test", args.num_test, seed + TEST_SEED_OFFSET)):
        try:
            cfg = SynthConfig(num_samples=n, extent=args.extent, seed=s)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        m = synth_generate(cfg, args.out / split, split)
        log.info("wrote %d %s pairs to %s", len(m), split, m.root)


def cmd_train_seg(args):
    cfg = _train_config(args, 1)
    manifest = read_manifest(args.data, with_post=False)
    result = pipeline.train_stage1(manifest, cfg, out_dir=args.out)
    log.info("stage 1 checkpoint %s", result.checkpoint)


def cmd_train_damage(args):
    cfg = _train_config(args, 2)
    manifest = read_manifest(args.data)
    result = pipeline.train_stage2(manifest, cfg, args.stage1_checkpoint, out_dir=args.out)
    log.info("stage 2 checkpoint %s", result.checkpoint)


def cmd_predict(args):
    s1, s2 = pipeline.load_models(args.stage1_checkpoint, args.checkpoint)
    manifest = read_manifest(args.data)
    for sample in manifest.load_samples():
        out = pipeline.predict(s1, s2, sample)
        atomic_write(args.out / f"{sample.id}_pred.pgm", pnm.encode(out.p_final.astype(np.uint8)))
        atomic_write(args.out / f"{sample.id}_building.pgm", pnm.encode(out.p_B.astype(np.uint8)))
    log.info("wrote predictions for %d pairs to %s", len(manifest), args.out)


def _evaluate(args):
    s1, s2 = pipeline.load_models(args.stage1_checkpoint, args.checkpoint)
    return pipeline.evaluate(read_manifest(args.data), s1, s2)


def cmd_evaluate(args):
    report = _evaluate(args)
    text = report.to_json()
    print(text)
    if args.out is not None:
        atomic_write(args.out / "metrics.json", (text + "\n").encode())


def cmd_report(args):
    from .report import write_report

    report = _evaluate(args)
    curves = [p for p in (args.stage1_checkpoint.with_name("stage1_loss.csv"),
                          args.checkpoint.with_name("stage2_loss.csv")) if p.exists()]
    for path in write_report(report, curves, args.out):
        log.info("wrote %s", path)


def cmd_gradcheck(args):
    from .gradsuite import CASES, run_case

    worst = 0.0
    for name in CASES:
        err = max(run_case(name, args.seed + s) for s in range(args.seeds))
        worst = max(worst, err)
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:28s} max rel err {err:.3e}  {status}")
    if worst >= args.tolerance:
        raise NumericalError(f"worst relative error {worst:.3e} exceeds {args.tolerance:g}")


COMMANDS = {
    "synth": cmd_synth,
    "train-seg": cmd_train_seg,
    "train-damage": cmd_train_damage,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bda: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, pnm.PnmError) as exc:
        print(f"bda: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"bda: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
