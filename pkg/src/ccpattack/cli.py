"""``ccp`` command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
invariant violation. Every flag is validated before any file is written.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .analysis import histogram, write_histogram_csv
from .baselines import FgsmParams, OnePixelParams, fgsm_batch
from .ccp import PROFILES, CcpParams, CcpTrialPlan, Scheme, attack_dataset
from .harness import ExperimentError, PlanError, load_plan, onepixel_dataset, parse_lr_schedule, run_experiment
from .image import Dataset, FormatError, load_cifar_binary, load_ppm_dir, read_ppm, write_cifar_binary, write_ppm_dir
from .model import CcpAugmentation, SpecError, TrainConfig, evaluate, init_model, load_checkpoint, save_checkpoint, small_cnn, train
from .synthetic import TASKS, gen_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits: {text}")
    return v


def _add_data_flags(p, inp=True):
    if inp:
        p.add_argument("--in", dest="inp", required=True, help="CIFAR-binary file or folder of .ppm images")
    p.add_argument("--count", type=int, default=None, help="expected record count (default: from file size)")
    p.add_argument("--num-classes", type=int, default=10, help="label range of the dataset (default 10)")
    p.add_argument("--size", type=int, default=32, help="image side length for binary records (default 32)")


def _add_ccp_flags(p):
    p.add_argument("--profile", choices=sorted(PROFILES), default="cifar",
                   help="scale/bias preset: cifar = s 2, b 0; highres = s 1, b 30 (default cifar)")
    p.add_argument("--scale", type=float, default=None, help="scale s (overrides profile)")
    p.add_argument("--bias", type=float, default=None, help="bias b (overrides profile)")
    p.add_argument("--lower", type=float, default=0.0, help="lower weight bound L (default 0)")
    p.add_argument("--upper", type=float, default=1.0, help="upper weight bound U (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccp", description="Color channel perturbation attacks and defenses.")
    parser.add_argument("--version", action="version", version=f"ccp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("attack", help="attack a dataset (CCP, FGSM or one-pixel)")
    p.add_argument("--method", choices=("ccp", "fgsm", "onepixel"), default="ccp")
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="variable")
    _add_ccp_flags(p)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--model", help="model checkpoint (fgsm / onepixel)")
    p.add_argument("--epsilon", type=float, default=8.0, help="FGSM step in raw intensity units (default 8)")
    p.add_argument("--pop", type=int, default=50, help="DE population (default 50)")
    p.add_argument("--iters", type=int, default=40, help="DE generations (default 40)")
    p.add_argument("--pixels", type=int, default=1, help="one-pixel budget (default 1)")
    p.add_argument("--de-f", type=float, default=0.5)
    p.add_argument("--de-cr", type=float, default=0.9)
    p.add_argument("--out", required=True, help="output file (.bin) or folder (PPM)")
    p.add_argument("--workers", type=int, default=1)
    _add_data_flags(p)

    p = sub.add_parser("train", help="train SmallCNN on a CIFAR-binary file")
    p.add_argument("--train", required=True, help="training set (CIFAR binary)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-schedule", default=None, help='stages like "10:1e-3,5:1e-4" (overrides --epochs/--lr)')
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--augment", choices=("none", "ccp"), default="none")
    p.add_argument("--aug-prob", type=float, default=0.5)
    p.add_argument("--hflip", action="store_true")
    _add_ccp_flags(p)
    _add_data_flags(p, inp=False)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    _add_data_flags(p)

    p = sub.add_parser("hist", help="per-channel 256-bin histogram of a PPM image as CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("experiment", help="run a multi-trial experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("gen-synthetic", help="write a 3-class synthetic dataset in CIFAR-binary records")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--task", choices=sorted(TASKS), default="dominant")
    p.add_argument("--out", required=True)
    return parser


def _ccp_params(args, scheme="variable") -> CcpParams:
    prof = PROFILES[args.profile]
    scale = prof["scale"] if args.scale is None else args.scale
    bias = prof["bias"] if args.bias is None else args.bias
    try:
        return CcpParams(scale, bias, args.lower, args.upper, Scheme(scheme))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_dataset(args, path=None) -> Dataset:
    path = Path(path or args.inp)
    if not path.exists():
        raise DataError(f"no such file or directory: {path}")
    if path.is_dir():
        return load_ppm_dir(path, args.num_classes)
    if path.suffix.lower() == ".ppm":
        return Dataset(read_ppm(path)[None], [0], args.num_classes, (path.name,))
    return load_cifar_binary(path, args.count, args.num_classes, args.size)


def _write_dataset(ds: Dataset, out: str) -> None:
    p = Path(out)
    if p.suffix.lower() in (".bin", ".dat"):
        write_cifar_binary(ds, p)
    else:
        write_ppm_dir(ds, p)


def _require(cond, msg):
    if not cond:
        raise UsageError(msg)


def cmd_attack(args) -> int:
    _require(args.workers >= 1, "--workers must be >= 1")
    if args.method == "ccp":
        params = _ccp_params(args, args.scheme)
    else:
        _require(args.model, f"--method {args.method} needs --model")
        try:
            fgsm = FgsmParams(args.epsilon)
            onepx = OnePixelParams(args.pixels, args.pop, args.iters, args.de_f, args.de_cr)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    ds = _load_dataset(args)
    if args.method == "ccp":
        out = attack_dataset(ds, CcpTrialPlan(params, args.seed, args.trial), workers=args.workers)
    else:
        model = load_checkpoint(args.model)
        if args.method == "fgsm":
            out = ds.with_images(fgsm_batch(model, ds.images, ds.labels, fgsm))
        else:
            out = onepixel_dataset(model, ds, onepx, args.seed, args.trial)
    _write_dataset(out, args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        sched = parse_lr_schedule(args.lr_schedule) if args.lr_schedule else None
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    epochs = sum(n for n, _ in sched) if sched else args.epochs
    aug = None
    try:
        if args.augment == "ccp":
            aug = CcpAugmentation(_ccp_params(args), args.aug_prob)
        config = TrainConfig(epochs, args.batch, sched, args.lr, args.seed, aug, args.hflip)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = load_cifar_binary(_existing(args.train), args.count, args.num_classes, args.size)
    model = init_model(small_cnn(args.num_classes), ds.image_shape, args.seed)
    history = train(model, ds, config)
    save_checkpoint(model, args.out)
    for rec in history.epochs:
        print(f"epoch {rec.epoch} lr {rec.lr:g} loss {rec.loss:.4f} acc {rec.accuracy:.4f}")
    return EXIT_OK


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {p}")
    return p


def cmd_eval(args) -> int:
    model = load_checkpoint(_existing(args.model))
    ds = _load_dataset(args)
    print(f"{evaluate(model, ds):.4f}")
    return EXIT_OK


def cmd_hist(args) -> int:
    write_histogram_csv(histogram(read_ppm(_existing(args.inp))), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    _require(args.workers >= 1, "--workers must be >= 1")
    try:
        plan = load_plan(_existing(args.plan))
    except PlanError as exc:
        raise UsageError(f"{args.plan}: {exc}") from exc
    results = run_experiment(plan, args.out, workers=args.workers)
    for name, res in results.models.items():
        print(f"[{name}] clean {res.clean_accuracy:.4f}")
        for rep in res.reports:
            print(f"[{name}] {rep.attack_name:9s} mean {rep.mean:.4f} std {rep.std:.4f} drop {rep.drop_percent:.2f}%")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    _require(args.size > 0, "--size must be positive")
    _require(args.per_class >= 0, "--per-class must be >= 0")
    _require(args.task != "shape" or args.size >= 10, "--task shape needs --size >= 10")
    write_cifar_binary(gen_synthetic(args.per_class, args.size, args.seed, args.task), args.out)
    return EXIT_OK


COMMANDS = {
    "attack": cmd_attack,
    "train": cmd_train,
    "eval": cmd_eval,
    "hist": cmd_hist,
    "experiment": cmd_experiment,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"ccp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, SpecError, ExperimentError, OSError) as exc:
        print(f"ccp {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"ccp {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
