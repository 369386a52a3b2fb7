"""Command-line surface: noise injection, training runs, the verification
suite, and the loss-processing/median ablation.

Configs are strict JSON: unknown keys are rejected so a misspelled
hyperparameter can never silently fall back to a default.  Every command is
reproducible from its config file and seed alone.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import data as data_ops
from . import model as model_ops
from . import noise as noise_ops
from . import trainer, verify
from .numerics import RngStream
from .rml import RegroupParams
from .trainer import RunConfig

STREAM_DATA = 1
STREAM_SPLIT = 3
STREAM_INIT = 4
STREAM_VERIFY = 5


class ConfigError(ValueError):
    """Configuration validation failure, with the offending key path."""


def _check_keys(section: dict, allowed: set[str], required: set[str], path: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"missing required key {path}.{sorted(missing)[0]}")


@dataclass
class DatasetSpec:
    kind: str
    num_classes: int = 10
    per_class: int = 500
    dim: int = 8
    separation: float = 4.0
    noise_stdev: float = 0.1
    images: str = ""
    labels: str = ""
    path: str = ""

    _KEYS = {
        "blobs": {"kind", "num_classes", "per_class", "dim", "separation"},
        "moons": {"kind", "per_class", "noise_stdev"},
        "idx": {"kind", "images", "labels"},
        "container": {"kind", "path"},
    }

    @classmethod
    def from_dict(cls, section: dict) -> "DatasetSpec":
        kind = section.get("kind")
        if kind not in cls._KEYS:
            raise ConfigError(f"dataset.kind must be one of {sorted(cls._KEYS)}")
        required = {"kind"} if kind in ("blobs", "moons") else cls._KEYS[kind]
        _check_keys(section, cls._KEYS[kind], required, "dataset")
        return cls(**section)

    def to_dict(self) -> dict:
        full = asdict(self)
        return {k: full[k] for k in self._KEYS[self.kind]}


@dataclass
class ModelSpec:
    arch: str = "mlp"
    hidden: int = 64

    @classmethod
    def from_dict(cls, section: dict) -> "ModelSpec":
        _check_keys(section, {"arch", "hidden"}, set(), "model")
        spec = cls(**section)
        if spec.arch not in ("linear", "mlp"):
            raise ConfigError("model.arch must be 'linear' or 'mlp'")
        return spec

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerSpec:
    lr_init: float = 0.1
    lr_min: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4

    @classmethod
    def from_dict(cls, section: dict) -> "OptimizerSpec":
        _check_keys(section, set(cls.__dataclass_fields__), set(), "optimizer")
        return cls(**section)

    def to_dict(self) -> dict:
        return asdict(self)


_RUN_KEYS = {"mode", "total_epochs", "batch_size", "warmup_epochs",
             "common_epochs", "ema_lambda", "seed", "regroup"}
_REGROUP_KEYS = {"n", "k", "epsilon_bias", "use_processed_loss", "estimator"}
_NOISE_KEYS = {"kind", "rate", "rng_stream"}


def _run_config_from_dict(section: dict) -> RunConfig:
    _check_keys(section, _RUN_KEYS, {"mode"}, "run")
    body = dict(section)
    regroup_section = body.pop("regroup", {})
    _check_keys(regroup_section, _REGROUP_KEYS, set(), "run.regroup")
    try:
        return RunConfig(regroup=RegroupParams(**regroup_section), **body)
    except ValueError as exc:
        raise ConfigError(f"run: {exc}") from exc


def _run_config_to_dict(config: RunConfig) -> dict:
    body = asdict(config)
    return body


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    run: RunConfig
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    noise: noise_ops.NoiseSpec | None = None
    test_fraction: float = 0.2
    output_dir: str = "runs/out"

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        _check_keys(
            payload,
            {"dataset", "noise", "model", "optimizer", "run", "test_fraction", "output_dir"},
            {"dataset", "run"},
            "config",
        )
        noise_spec = None
        if "noise" in payload:
            _check_keys(payload["noise"], _NOISE_KEYS, {"kind", "rate"}, "noise")
            try:
                noise_spec = noise_ops.NoiseSpec(**payload["noise"])
            except ValueError as exc:
                raise ConfigError(f"noise: {exc}") from exc
        test_fraction = payload.get("test_fraction", 0.2)
        if not 0.0 < test_fraction < 1.0:
            raise ConfigError("config.test_fraction must be in (0, 1)")
        return cls(
            dataset=DatasetSpec.from_dict(payload["dataset"]),
            noise=noise_spec,
            model=ModelSpec.from_dict(payload.get("model", {})),
            optimizer=OptimizerSpec.from_dict(payload.get("optimizer", {})),
            run=_run_config_from_dict(payload["run"]),
            test_fraction=test_fraction,
            output_dir=payload.get("output_dir", "runs/out"),
        )

    def to_dict(self) -> dict:
        payload = {
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "run": _run_config_to_dict(self.run),
            "test_fraction": self.test_fraction,
            "output_dir": self.output_dir,
        }
        if self.noise is not None:
            payload["noise"] = asdict(self.noise)
        return payload


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return ExperimentConfig.from_dict(json.load(f))


def build_dataset(spec: DatasetSpec, seed: int) -> data_ops.Dataset:
    rng = RngStream(seed, STREAM_DATA)
    if spec.kind == "blobs":
        return data_ops.make_blobs(spec.num_classes, spec.per_class, spec.dim,
                                   spec.separation, rng)
    if spec.kind == "moons":
        return data_ops.make_two_moons(spec.per_class, spec.noise_stdev, rng)
    if spec.kind == "idx":
        return data_ops.read_idx(spec.images, spec.labels)
    return data_ops.load_dataset(spec.path)


def _prepare_training_data(config: ExperimentConfig, seed: int):
    """Split first, inject noise into the training half only: the held-out
    split stays clean, mirroring evaluation on a trusted test set."""
    dataset = build_dataset(config.dataset, seed)
    train, test = data_ops.split(dataset, config.test_fraction, RngStream(seed, STREAM_SPLIT))
    if config.noise is not None:
        train = noise_ops.apply(train, config.noise, seed)
    mean, std = data_ops.feature_stats(train.features)
    return data_ops.standardize(train, mean, std), data_ops.standardize(test, mean, std)


def run_training(config: ExperimentConfig, seed: int):
    """Full pipeline: data, models, dispatch on mode.  Returns
    (student, teacher_or_None, metrics rows, train set, test set)."""
    train, test = _prepare_training_data(config, seed)
    rng = RngStream(seed, STREAM_INIT)
    student = model_ops.init_model(config.model.arch, train.dim, train.num_classes,
                                   rng, hidden=config.model.hidden)
    opt = model_ops.init_optimizer(student, config.optimizer.lr_init,
                                   config.run.total_epochs,
                                   lr_min=config.optimizer.lr_min,
                                   momentum=config.optimizer.momentum,
                                   weight_decay=config.optimizer.weight_decay)
    run = replace(config.run, seed=seed)
    if run.mode == "ce":
        student, rows = trainer.train_ce(train, student, opt, run, test)
        return student, None, rows, train, test
    teacher = student.copy()
    if run.mode == "rml":
        student, teacher, rows = trainer.train_rml(train, student, teacher, opt, run, test)
    else:
        student, teacher, rows = trainer.train_rml_semi(train, student, teacher, opt, run, test)
    return student, teacher, rows, train, test


# -- subcommands ----------------------------------------------------------------

def cmd_inject(config: ExperimentConfig, seed: int, out_dir) -> dict:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(config.dataset, seed)
    if dataset.true_labels is None:
        # File-backed labels count as the pre-corruption truth.
        dataset = data_ops.Dataset(dataset.features, dataset.observed_labels,
                                   dataset.num_classes,
                                   true_labels=dataset.observed_labels.copy())
    if config.noise is None:
        raise ConfigError("inject needs a noise section")
    noisy = noise_ops.apply(dataset, config.noise, seed)
    mask = noise_ops.corruption_mask(noisy)
    data_ops.save_dataset(noisy, out / "dataset.rmld")
    with open(out / "mask.csv", "w", newline="") as f:
        f.write("sample_id,is_corrupted\n")
        for i, hit in enumerate(mask):
            f.write(f"{i},{int(hit)}\n")
    return {
        "dataset": str(out / "dataset.rmld"),
        "mask": str(out / "mask.csv"),
        "realized_rate": float(mask.mean()),
    }


def cmd_train(config: ExperimentConfig, seed: int, out_dir) -> dict:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    student, teacher, rows, train, test = run_training(config, seed)
    wall = time.perf_counter() - started
    trainer.write_metrics_csv(rows, out / "metrics.csv")
    model_ops.save_checkpoint(student, out / "student.ckpt")
    if teacher is not None:
        model_ops.save_checkpoint(teacher, out / "teacher.ckpt")
    summary = {
        "config": config.to_dict(),
        "seed": seed,
        "mode": config.run.mode,
        "n_train": train.n_samples,
        "n_test": test.n_samples,
        "final_test_accuracy": rows[-1].test_accuracy if rows else float("nan"),
        "final_train_loss": rows[-1].train_loss if rows else float("nan"),
        "wall_time_seconds": wall,
    }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def _cor1_report(seed: int) -> dict:
    """Train a small model on noisy blobs and check the clean-mass direction
    on its end-of-run loss cache."""
    from . import rml as rml_ops

    rng = RngStream(seed, STREAM_DATA)
    dataset = noise_ops.inject_symmetric(
        data_ops.make_blobs(4, 80, 4, 5.0, rng), 0.3, RngStream(seed, 2)
    )
    mean, std = data_ops.feature_stats(dataset.features)
    dataset = data_ops.standardize(dataset, mean, std)
    model = model_ops.init_model("linear", dataset.dim, dataset.num_classes,
                                 RngStream(seed, STREAM_INIT))
    opt = model_ops.init_optimizer(model, 0.5, 30)
    config = RunConfig(mode="ce", total_epochs=30, batch_size=64, seed=seed)
    trainer.train_ce(dataset, model, opt, config)
    cache = rml_ops.refresh_cache(rml_ops.empty_cache(dataset.n_samples), dataset,
                                  model, RegroupParams(n=2, k=2),
                                  RngStream(seed, trainer.STREAM_REFRESH))
    return verify.check_cor1(dataset, cache)


def cmd_verify(suite: str, seed: int, trials: int | None = None) -> dict:
    rng = RngStream(seed, STREAM_VERIFY)
    reports = []
    if suite in ("prop1", "all"):
        reports.append(verify.check_prop1(trials or 10_000, 100, rng.child(1)))
    if suite in ("prop2", "all"):
        experiment = verify.MomExperiment(
            base=verify.Population("normal", 1.0, 1.0),
            n=6, k=10, epsilon_r=1.2, trials=trials or 100_000,
        )
        reports.append(verify.check_prop2(experiment, rng.child(2)))
    if suite in ("mom", "all"):
        reports.append(verify.check_mom_robustness(seed=seed))
    if suite in ("cor1", "all"):
        reports.append(_cor1_report(seed))
    return {"suite": suite, "pass": all(r["pass"] for r in reports), "reports": reports}


ABLATION_VARIANTS = {
    "full": {},
    "no_processing": {"use_processed_loss": False},
    "no_median": {"estimator": "mean"},
}


def cmd_ablate(config: ExperimentConfig, seeds: list[int], out_dir) -> dict:
    """Same data and seed, three regroup variants; final accuracies side by
    side plus per-variant means."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {name: [] for name in ABLATION_VARIANTS}
    for seed in seeds:
        for name, overrides in ABLATION_VARIANTS.items():
            variant = replace(
                config,
                run=replace(config.run, mode="rml",
                            regroup=replace(config.run.regroup, **overrides)),
            )
            _, _, rows, _, _ = run_training(variant, seed)
            results[name].append(rows[-1].test_accuracy)
    with open(out / "ablation.csv", "w", newline="") as f:
        f.write("variant,seed,test_accuracy\n")
        for name, accs in results.items():
            for seed, acc in zip(seeds, accs):
                f.write(f"{name},{seed},{acc!r}\n")
        for name, accs in results.items():
            f.write(f"{name},mean,{float(np.mean(accs))!r}\n")
    return {name: float(np.mean(accs)) for name, accs in results.items()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rml-lab",
        description="Noisy-label training laboratory with regroup median loss.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    inject = sub.add_parser("inject", help="corrupt a dataset and write it out")
    inject.add_argument("--config", required=True)
    inject.add_argument("--seed", type=int, default=None)
    inject.add_argument("--out", default=None)

    train = sub.add_parser("train", help="run a training experiment")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", default=None)

    ver = sub.add_parser("verify", help="run the statistical verification suite")
    ver.add_argument("--suite", default="all",
                     choices=["prop1", "prop2", "cor1", "mom", "all"])
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--trials", type=int, default=None)
    ver.add_argument("--out", default=None)

    ablate = sub.add_parser("ablate", help="compare regroup variants")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--seeds", type=int, default=1,
                        help="number of consecutive seeds starting at run.seed")
    ablate.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            report = cmd_verify(args.suite, args.seed, args.trials)
            text = json.dumps(report, indent=2, sort_keys=True)
            print(text)
            if args.out:
                with open(args.out, "w") as f:
                    f.write(text + "\n")
            return 0 if report["pass"] else 1

        config = load_config(args.config)
        out_dir = args.out or config.output_dir
        if args.command == "inject":
            seed = args.seed if args.seed is not None else config.run.seed
            print(json.dumps(cmd_inject(config, seed, out_dir), indent=2, sort_keys=True))
            return 0
        if args.command == "train":
            seed = args.seed if args.seed is not None else config.run.seed
            summary = cmd_train(config, seed, out_dir)
            print(json.dumps({k: summary[k] for k in
                              ("mode", "seed", "final_test_accuracy", "final_train_loss")},
                             indent=2, sort_keys=True))
            return 0
        seeds = [config.run.seed + i for i in range(args.seeds)]
        print(json.dumps(cmd_ablate(config, seeds, out_dir), indent=2, sort_keys=True))
        return 0
    except Exception as exc:   # noqa: BLE001 - single CLI failure funnel
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr, indent=2, sort_keys=True)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
