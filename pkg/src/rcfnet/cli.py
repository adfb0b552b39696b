"""Command-line entry point.

Subcommands: rf-table, synth, train, predict, eval, pr-curve.
Exit codes: 0 success, 1 usage error, 2 data/model error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation as eval_mod
from . import inference as inf_mod
from . import model as model_mod
from . import trainer as trainer_mod


class UsageError(SystemExit):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise UsageError(1)


def _load_network_config(args, default=None):
    if getattr(args, "config", None):
        return model_mod.load_config(args.config)
    if default is not None:
        return default
    return model_mod.tiny_rcf_config()


def _build_parser():
    parser = _Parser(prog="rcf", description="Edge detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rf-table", parents=[], help="print per-layer receptive "
                       "field and stride sizes")
    p.add_argument("--config", help="network config file (default: VGG16 layout)")
    p.add_argument("--standard-pool4", action="store_true",
                   help="use the unmodified backbone strides (pool4 stride 2, "
                   "no dilation, trailing pool)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=100, help="number of images")
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--size", default="64x64", help="canvas HxW (default 64x64)")
    p.add_argument("--annotators", type=int, default=4,
                   help="simulated annotators per image (default 4)")
    p.add_argument("--jitter", type=float, default=1.0,
                   help="max annotator boundary displacement in px (default 1.0)")

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="network config file (default: tiny config)")
    p.add_argument("--weights", help="initial weights or checkpoint to resume")
    p.add_argument("--iters", type=int, default=1000, help="total iterations")
    p.add_argument("--lr", type=float, default=1e-4, help="base learning rate")
    p.add_argument("--lr-decay-every", type=int, default=10_000,
                   help="iterations between 10x lr decays (default 10000)")
    p.add_argument("--batch-size", type=int, default=5, help="minibatch size")
    p.add_argument("--eta", type=float, default=0.5,
                   help="consensus ignore threshold (default 0.5)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.1,
                   help="positive/negative balance coefficient (default 1.1)")
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--checkpoint-every", type=int, default=1000,
                   help="iterations between checkpoints (default 1000)")

    p = sub.add_parser("predict", help="predict edge maps for a dataset or image")
    p.add_argument("--weights", required=True, help="weight file")
    p.add_argument("--config", help="network config file (default: tiny config)")
    p.add_argument("--data", help="dataset directory to predict")
    p.add_argument("--image", help="single image file to predict")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scales", default="1.0",
                   help="comma-separated pyramid scales (default 1.0)")
    p.add_argument("--side-outputs", action="store_true",
                   help="also write the per-stage maps (single scale only)")

    p = sub.add_parser("eval", help="evaluate predictions against a dataset")
    p.add_argument("--pred", required=True, help="directory of predicted maps")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", help="report file (default: stdout)")
    p.add_argument("--max-dist-frac", type=float, default=0.0075,
                   help="matching radius as fraction of image diagonal "
                   "(default 0.0075)")
    p.add_argument("--thresholds", type=int, default=99,
                   help="number of thresholds in the sweep (default 99)")

    p = sub.add_parser("pr-curve", help="render a PR curve from a report")
    p.add_argument("--report", required=True, help="report file from eval")
    p.add_argument("--out", required=True, help="output image file")
    return parser


def _cmd_rf_table(args):
    if args.config:
        config = model_mod.load_config(args.config)
    else:
        config = model_mod.vgg16_rcf_config()
    table = model_mod.receptive_field_table(config,
                                            standard_pool4=args.standard_pool4)
    print(f"{'layer':<10} {'rf':>5} {'stride':>7}")
    for e in table:
        print(f"{e.name:<10} {e.rf_size:>5} {e.stride:>7}")
    return 0


def _cmd_synth(args):
    try:
        h, w = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        print(f"error: bad --size {args.size!r}, expected HxW", file=sys.stderr)
        return 1
    samples = data_mod.generate_synthetic(args.count, args.seed, canvas=(h, w),
                                          annotators=args.annotators,
                                          jitter=args.jitter)
    data_mod.save_dataset(samples, args.out)
    print(f"wrote {len(samples)} images to {args.out}")
    return 0


def _cmd_train(args):
    config = _load_network_config(args)
    dataset = data_mod.load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tc = trainer_mod.TrainConfig(
        base_lr=args.lr, lr_decay_every=args.lr_decay_every,
        batch_size=args.batch_size, total_iters=args.iters,
        eta=args.eta, lam=args.lam, seed=args.seed,
        checkpoint_every=args.checkpoint_every)
    m = model_mod.build(config, seed=args.seed)
    start = 0
    if args.weights:
        start = trainer_mod.load_checkpoint(m, args.weights)
    trainer_mod.train(m, dataset, tc, log_path=out / "train.log",
                      checkpoint_dir=out / "checkpoints", start_iter=start)
    model_mod.save_weights(m, out / "model.rcfw")
    model_mod.save_config(config, out / "network.cfg")
    print(f"trained {args.iters} iterations, weights at {out / 'model.rcfw'}")
    return 0


def _cmd_predict(args):
    if bool(args.data) == bool(args.image):
        print("error: exactly one of --data / --image is required",
              file=sys.stderr)
        return 1
    config = _load_network_config(args)
    m = model_mod.build(config, seed=0)
    model_mod.load_weights(m, args.weights)
    scales = inf_mod.ScaleSet(tuple(float(s) for s in args.scales.split(",")))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.image:
        from PIL import Image
        img = np.asarray(Image.open(args.image).convert("RGB"),
                         dtype=np.float32).transpose(2, 0, 1) / 255.0
        items = [(Path(args.image).stem, img)]
    else:
        items = [(ann.image_id, ann.image)
                 for ann in data_mod.load_dataset(args.data)]

    for image_id, img in items:
        fused = inf_mod.predict_multiscale(m, img, scales)
        data_mod.save_prediction(fused, out / f"{image_id}.png")
        if args.side_outputs:
            side = inf_mod.predict(m, img)
            for k, smap in enumerate(side.stage_maps, 1):
                data_mod.save_prediction(smap[0, 0],
                                         out / f"{image_id}_stage{k}.png")
    print(f"wrote {len(items)} predictions to {out}")
    return 0


def _cmd_eval(args):
    dataset = data_mod.load_dataset(args.data)
    params = eval_mod.MatchParams(max_dist_frac=args.max_dist_frac,
                                  thresholds=args.thresholds)
    pred_dir = Path(args.pred)
    counts = []
    for ann in dataset:
        pred_path = pred_dir / f"{ann.image_id}.png"
        if not pred_path.exists() and not pred_path.with_suffix(".rcfm").exists():
            print(f"error: no prediction for {ann.image_id!r} in {pred_dir}",
                  file=sys.stderr)
            return 2
        pred = data_mod.load_prediction(pred_path)
        counts.append(eval_mod.evaluate_image(pred, ann.annotator_maps, params))
    report = eval_mod.ods_ois(counts)
    text = eval_mod.report_text(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"ODS {report.ods_f:.4f}  OIS {report.ois_f:.4f}  -> {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_pr_curve(args):
    report = eval_mod.parse_report_text(
        Path(args.report).read_text(encoding="utf-8"))
    eval_mod.render_pr_curve(report, args.out)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "rf-table": _cmd_rf_table,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "pr-curve": _cmd_pr_curve,
}


def run(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (model_mod.WeightFileError, model_mod.ConfigError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))
