"""Multi-trial experiment runner.

A plan trains a plain model once (and optionally a CCP-augmented one), then
for every trial evaluates each stochastic attack on a freshly attacked copy
of the test set. FGSM has no randomness, so it is evaluated once and its
accuracy repeated for every trial.

Plan files are flat ``key = value`` text; ``#`` starts a comment.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .analysis import TrialReport, aggregate, emit_csv
from .baselines import FgsmParams, OnePixelParams, fgsm_batch, one_pixel_attack
from .ccp import CcpParams, CcpTrialPlan, Scheme, attack_dataset
from .image import Dataset, load_cifar_binary
from .model import CcpAugmentation, Model, TrainConfig, evaluate, init_model, save_checkpoint, small_cnn, train
from .prng import Purpose, SeedPath

log = logging.getLogger(__name__)

ATTACKS = ("ccp_f", "ccp_v", "fgsm", "onepixel")


class PlanError(ValueError):
    pass


class ExperimentError(RuntimeError):
    """A module error re-raised with the experiment stage it happened in."""


@dataclass
class ExperimentPlan:
    train_path: str = ""
    test_path: str = ""
    num_classes: int = 10
    image_size: int = 32
    train_limit: int = 0  # 0 = use everything
    test_limit: int = 0
    trials: int = 30
    seed: int = 0
    attacks: tuple[str, ...] = ATTACKS
    scale: float = 2.0
    bias: float = 0.0
    lower: float = 0.0
    upper: float = 1.0
    epsilon: float = 8.0
    de_pop: int = 50
    de_iters: int = 40
    de_pixels: int = 1
    de_f: float = 0.5
    de_cr: float = 0.9
    de_trials: int = 0  # 0 = same as trials
    de_limit: int = 0  # attack only the first N test images; 0 = all
    de_early_stop: bool = False
    defense: bool = True
    aug_prob: float = 0.5
    epochs: int = 10
    batch: int = 32
    lr_schedule: tuple[tuple[int, float], ...] | None = None
    lr: float = 1e-3
    hflip: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise PlanError("trials must be >= 1")
        if not self.attacks:
            raise PlanError("attack roster is empty")
        unknown = set(self.attacks) - set(ATTACKS)
        if unknown:
            raise PlanError(f"unknown attacks: {sorted(unknown)}")
        try:
            self.ccp_params()
            self.fgsm_params()
            if "onepixel" in self.attacks:
                self.onepixel_params()
            self.train_config(False)
        except ValueError as exc:
            raise PlanError(str(exc)) from exc

    def ccp_params(self, scheme: Scheme = Scheme.VARIABLE) -> CcpParams:
        return CcpParams(self.scale, self.bias, self.lower, self.upper, scheme)

    def fgsm_params(self) -> FgsmParams:
        return FgsmParams(self.epsilon)

    def onepixel_params(self) -> OnePixelParams:
        return OnePixelParams(self.de_pixels, self.de_pop, self.de_iters, self.de_f, self.de_cr, early_stop=self.de_early_stop)

    def train_config(self, augmented: bool) -> TrainConfig:
        aug = CcpAugmentation(self.ccp_params(), self.aug_prob) if augmented else None
        return TrainConfig(self.epochs, self.batch, self.lr_schedule, self.lr, self.seed, aug, self.hflip)


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_lr_schedule(text: str) -> tuple[tuple[int, float], ...]:
    """``"10:1e-3,5:1e-4"`` -> ((10, 0.001), (5, 0.0001))."""
    stages = []
    for part in text.split(","):
        n, _, lr = part.strip().partition(":")
        if not lr:
            raise ValueError(f"bad lr stage {part!r}; expected EPOCHS:LR")
        stages.append((int(n), float(lr)))
    return tuple(stages)


def parse_plan(text: str) -> ExperimentPlan:
    types = {f.name: f.type for f in fields(ExperimentPlan)}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise PlanError(f"line {lineno}: expected key = value")
        if key == "batch_size":
            key = "batch"
        if key == "scheme":
            # scheme = fixed | variable | both, a shorthand for the CCP part of the roster
            chosen = {"fixed": ("ccp_f",), "variable": ("ccp_v",), "both": ("ccp_f", "ccp_v")}.get(value)
            if chosen is None:
                raise PlanError(f"line {lineno}: scheme must be fixed, variable or both")
            values["_scheme"] = chosen
            continue
        if key not in types:
            raise PlanError(f"line {lineno}: unknown key {key!r}")
        try:
            kind = types[key]
            if key == "attacks":
                values[key] = tuple(a.strip() for a in value.split(",") if a.strip())
            elif key == "lr_schedule":
                values[key] = parse_lr_schedule(value)
            elif kind == "bool":
                values[key] = _parse_bool(value)
            elif kind == "int":
                values[key] = int(value, 0)
            elif kind == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise PlanError(f"line {lineno}: bad value for {key}: {exc}") from exc
    scheme = values.pop("_scheme", None)
    if scheme is not None:
        roster = values.get("attacks", ATTACKS)
        values["attacks"] = tuple(a for a in roster if not a.startswith("ccp_")) + scheme
        values["attacks"] = tuple(a for a in ATTACKS if a in values["attacks"])
    if "lr_schedule" in values and "epochs" not in values:
        values["epochs"] = sum(n for n, _ in values["lr_schedule"])
    return ExperimentPlan(**values)


def load_plan(path: str | os.PathLike) -> ExperimentPlan:
    return parse_plan(Path(path).read_text(encoding="utf-8"))


@dataclass
class ModelResults:
    name: str
    clean_accuracy: float
    reports: list[TrialReport]
    model: Model | None = None
    checkpoint: Path | None = None
    csv_path: Path | None = None


@dataclass
class ExperimentResults:
    models: dict[str, ModelResults] = field(default_factory=dict)

    def report(self, model: str, attack: str) -> TrialReport:
        for rep in self.models[model].reports:
            if rep.attack_name == attack:
                return rep
        raise KeyError(attack)


def _load(path: str, plan: ExperimentPlan, limit: int) -> Dataset:
    ds = load_cifar_binary(path, None, plan.num_classes, plan.image_size)
    if limit and limit < len(ds):
        ds = ds.subset(range(limit))
    return ds


def onepixel_dataset(model, ds: Dataset, params: OnePixelParams, seed: int, trial: int) -> Dataset:
    images = np.stack(
        [
            one_pixel_attack(model, ds.images[i], int(ds.labels[i]), params, SeedPath(seed, trial, i, Purpose.ATTACK_SEARCH))
            for i in range(len(ds))
        ]
    )
    return ds.with_images(images)


def evaluate_attacks(model: Model, test: Dataset, plan: ExperimentPlan, workers: int = 1) -> tuple[float, list[TrialReport]]:
    """Clean accuracy and one TrialReport per attack in the plan's roster."""
    clean = evaluate(model, test)
    reports = []

    def run_trials(fn, n):
        if workers <= 1:
            return [fn(t) for t in range(n)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(n)))

    for attack in plan.attacks:
        if attack in ("ccp_f", "ccp_v"):
            params = plan.ccp_params(Scheme.FIXED if attack == "ccp_f" else Scheme.VARIABLE)
            accs = run_trials(lambda t: evaluate(model, attack_dataset(test, CcpTrialPlan(params, plan.seed, t))), plan.trials)
            reports.append(aggregate(accs, clean, attack))
        elif attack == "fgsm":
            adv = test.with_images(fgsm_batch(model, test.images, test.labels, plan.fgsm_params()))
            reports.append(aggregate([evaluate(model, adv)] * plan.trials, clean, attack))
        elif attack == "onepixel":
            sub = test.subset(range(plan.de_limit)) if plan.de_limit and plan.de_limit < len(test) else test
            base = evaluate(model, sub)
            params = plan.onepixel_params()
            n = plan.de_trials or plan.trials
            accs = run_trials(lambda t: evaluate(model, onepixel_dataset(model, sub, params, plan.seed, t)), n)
            reports.append(aggregate(accs, base, attack))
        log.info("%s: %s", attack, reports[-1].mean)
    return clean, reports


def train_model(train_ds: Dataset, plan: ExperimentPlan, augmented: bool) -> Model:
    model = init_model(small_cnn(plan.num_classes), train_ds.image_shape, plan.seed)
    train(model, train_ds, plan.train_config(augmented))
    return model


def run_experiment(plan: ExperimentPlan, out_dir: str | os.PathLike | None = None, workers: int = 1) -> ExperimentResults:
    """Train, attack, aggregate. Writes ``<model>.csv`` and ``<model>.ccpm`` into ``out_dir``."""
    stage = "loading data"
    try:
        train_ds = _load(plan.train_path, plan, plan.train_limit)
        test = _load(plan.test_path, plan, plan.test_limit)
        results = ExperimentResults()
        variants = [("plain", False)] + ([("augmented", True)] if plan.defense else [])
        for name, augmented in variants:
            stage = f"training {name} model"
            model = train_model(train_ds, plan, augmented)
            stage = f"attacking {name} model"
            clean, reports = evaluate_attacks(model, test, plan, workers)
            results.models[name] = ModelResults(name, clean, reports, model)
    except (OSError, ValueError) as exc:
        raise ExperimentError(f"{stage}: {exc}") from exc
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, res in results.models.items():
            res.csv_path = out / f"{name}.csv"
            res.checkpoint = out / f"{name}.ccpm"
            save_checkpoint(res.model, res.checkpoint)
            emit_csv([aggregate([res.clean_accuracy], res.clean_accuracy, "clean"), *res.reports], res.csv_path)
    return results
