"""Training loop with best-dev checkpointing, evaluation and multi-seed runs."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import model as M
from .audio import AudioClip
from .augment import AugmentConfig, expand_training_set
from .checkpoint import Checkpoint, save_checkpoint
from .dataset import DatasetManifest, TaskSpec, batch_indices, label_of, load_split
from .layers import softmax_cross_entropy
from .metrics import Evaluation, confusion_matrix, write_per_class_table
from .optim import AdamState, PlateauSchedule, adam_step
from .stats import format_cell, mean_std
from .tensor import Tensor, backward

log = logging.getLogger(__name__)


class NumericFailure(FloatingPointError):
    def __init__(self, message: str, epoch: int, batch: int, parameter: str | None = None):
        self.epoch, self.batch, self.parameter = epoch, batch, parameter
        super().__init__(f"{message} (epoch {epoch}, batch {batch}" + (f", parameter {parameter})" if parameter else ")"))


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-3
    dropout: float = 0.75
    patience: int = 4
    lr_factor: float = 0.5
    seeds: tuple = (0, 1, 2, 3, 4)
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    eval_batch_size: int = 128
    # "best": weights of the best dev epoch; "last": weights after the final epoch
    keep: str = "best"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "patience", "lr_factor", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.keep not in ("best", "last"):
            raise ValueError(f"keep must be 'best' or 'last', got {self.keep!r}")
        self.seeds = tuple(int(s) for s in self.seeds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["augment"] = self.augment.to_dict() if self.augment is not None else None
        return d


@dataclass
class ClipSet:
    """Waveforms [n, L] with integer labels and a flag marking augmented copies."""

    x: np.ndarray
    labels: np.ndarray
    augmented: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.augmented = np.asarray(self.augmented, dtype=bool)
        if not (len(self.x) == len(self.labels) == len(self.augmented)):
            raise ValueError("ClipSet fields differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_clips(cls, clips: Sequence[AudioClip], task: TaskSpec) -> "ClipSet":
        x = np.stack([c.samples for c in clips]).astype(np.float32) if clips else np.zeros((0, 16000), np.float32)
        labels = [label_of(c.word, task) for c in clips]
        return cls(x, labels, [c.augmented is not None for c in clips])

    @classmethod
    def from_arrays(cls, x, labels) -> "ClipSet":
        x = np.asarray(x, dtype=np.float32)
        return cls(x, labels, np.zeros(len(x), dtype=bool))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    dev_accuracy: float
    lr: float


@dataclass
class RunMetrics:
    seed: int
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev_accuracy: float = -1.0
    test: Evaluation | None = None

    @property
    def test_accuracy(self) -> float:
        return self.test.accuracy if self.test is not None else float("nan")

    def to_lines(self) -> list[str]:
        lines = [json.dumps({"type": "epoch", **asdict(e)}, sort_keys=True) for e in self.epochs]
        summary = {
            "type": "summary",
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_dev_accuracy": self.best_dev_accuracy,
        }
        if self.test is not None:
            summary["test"] = self.test.to_dict()
        lines.append(json.dumps(summary, sort_keys=True))
        return lines

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n")


def prepare_data(
    manifest: DatasetManifest, task: TaskSpec, augment: AugmentConfig | None, seed: int, workers: int = 1
) -> dict[str, ClipSet]:
    """Load the three splits; only the train split is ever augmented."""
    if task.version != manifest.version:
        raise ValueError(f"task is defined for {task.version}, manifest is {manifest.version}")
    train = load_split(manifest, "train")
    if augment is not None and augment.copies > 0 and train:
        train = expand_training_set(train, augment, seed, workers)
    return {
        "train": ClipSet.from_clips(train, task),
        "dev": ClipSet.from_clips(load_split(manifest, "dev"), task),
        "test": ClipSet.from_clips(load_split(manifest, "test"), task),
    }


def _seed_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


def predict_logits(params: M.ModelParams, config: M.ModelConfig, x: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Eval-mode logits for waveforms [n, L] (or [n, 1, L])."""
    if x.ndim == 2:
        x = x[:, None, :]
    out = [
        M.forward(params, config, Tensor(x[i:i + batch_size]), train=False).data
        for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(out) if out else np.zeros((0, config.n_classes), dtype=np.float32)


def evaluate_params(
    params: M.ModelParams, config: M.ModelConfig, data: ClipSet, class_names: Sequence[str], batch_size: int = 128
) -> Evaluation:
    if data.augmented.any():
        raise AssertionError("augmented clips must not be evaluated")
    if len(class_names) != config.n_classes:
        raise ValueError(f"model has {config.n_classes} classes, task has {len(class_names)}")
    pred = predict_logits(params, config, data.x, batch_size).argmax(axis=1)
    return Evaluation(confusion_matrix(data.labels, pred, config.n_classes), tuple(class_names))


def evaluate(checkpoint: Checkpoint, data, split: str, task: TaskSpec | None = None, batch_size: int = 128) -> Evaluation:
    """Confusion matrix and scores of a checkpoint on one split of a manifest or ClipSet dict."""
    if isinstance(data, DatasetManifest):
        if task is None:
            raise ValueError("evaluating a manifest needs a task")
        clipset = ClipSet.from_clips(load_split(data, split), task)
    else:
        clipset = data[split]
    names = task.class_names if task is not None else checkpoint.meta.get("class_names") or [
        str(i) for i in range(checkpoint.config.n_classes)
    ]
    if len(names) != checkpoint.config.n_classes:
        raise ValueError(f"checkpoint has {checkpoint.config.n_classes} classes, task has {len(names)}")
    return evaluate_params(checkpoint.params, checkpoint.config, clipset, names, batch_size)


def _snapshot(params: M.ModelParams) -> M.ModelParams:
    return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


def train(
    model_config: M.ModelConfig,
    train_config: TrainConfig,
    data: DatasetManifest | Mapping[str, ClipSet],
    seed: int = 0,
    task: TaskSpec | None = None,
    workers: int = 1,
) -> tuple[Checkpoint, RunMetrics]:
    """Train one model; test metrics use the kept weights (by default those of the best dev epoch)."""
    if isinstance(data, DatasetManifest):
        if task is None:
            raise ValueError("training from a manifest needs a task")
        data = prepare_data(data, task, train_config.augment, seed, workers)
    train_set, dev_set = data["train"], data["dev"]
    if len(train_set) == 0 or len(dev_set) == 0:
        raise ValueError("train and dev splits must be non-empty")
    for split in ("dev", "test"):
        if split in data and data[split].augmented.any():
            raise AssertionError(f"augmented clips leaked into the {split} split")

    config = replace(model_config, dropout_p=train_config.dropout).validate()
    if task is not None and task.n_classes != config.n_classes:
        raise ValueError(f"model has {config.n_classes} outputs, task {task.name} needs {task.n_classes}")
    class_names = task.class_names if task is not None else tuple(str(i) for i in range(config.n_classes))

    params = M.build(config, _seed_rng(seed, 0))
    shuffle_rng = _seed_rng(seed, 1)
    dropout_rng = _seed_rng(seed, 2)
    state = AdamState(lr=train_config.lr, weight_decay=train_config.weight_decay)
    sched = PlateauSchedule(lr=train_config.lr, factor=train_config.lr_factor, patience=train_config.patience)
    metrics = RunMetrics(seed=seed)
    best_params = _snapshot(params)

    for epoch in range(1, train_config.epochs + 1):
        loss_sum, correct = 0.0, 0
        for b, idx in enumerate(batch_indices(len(train_set), train_config.batch_size, shuffle_rng)):
            x = Tensor(train_set.x[idx][:, None, :])
            labels = train_set.labels[idx]
            logits = M.forward(params, config, x, train=True, rng=dropout_rng)
            loss = softmax_cross_entropy(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericFailure("non-finite training loss", epoch, b)
            for p in params.values():
                p.grad = None
            backward(loss)
            try:
                adam_step(params, None, state)
            except FloatingPointError as exc:
                raise NumericFailure("non-finite gradient", epoch, b, getattr(exc, "name", None)) from exc
            loss_sum += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())

        dev_eval = evaluate_params(params, config, dev_set, class_names, train_config.eval_batch_size)
        dev_acc = dev_eval.accuracy
        record = EpochRecord(epoch, loss_sum / len(train_set), correct / len(train_set), dev_acc, state.lr)
        metrics.epochs.append(record)
        # ties keep the earlier epoch
        if dev_acc > metrics.best_dev_accuracy:
            metrics.best_dev_accuracy = dev_acc
            metrics.best_epoch = epoch
            best_params = _snapshot(params)
        state.lr = sched.step(dev_acc)
        log.info("epoch %d loss %.5f train_acc %.4f dev_acc %.4f lr %.2e",
                 epoch, record.train_loss, record.train_accuracy, dev_acc, record.lr)

    if train_config.keep == "last":
        kept, kept_epoch, kept_dev = _snapshot(params), metrics.epochs[-1].epoch, metrics.epochs[-1].dev_accuracy
    else:
        kept, kept_epoch, kept_dev = best_params, metrics.best_epoch, metrics.best_dev_accuracy
    if "test" in data and len(data["test"]):
        metrics.test = evaluate_params(kept, config, data["test"], class_names, train_config.eval_batch_size)
    meta = {"seed": seed, "class_names": list(class_names)}
    if task is not None:
        meta.update(task=task.name, version=task.version)
    ckpt = Checkpoint(config, kept, kept_dev, kept_epoch, meta)
    return ckpt, metrics


@dataclass
class MultiSeedResult:
    seeds: tuple
    accuracies: tuple

    @property
    def summary(self):
        return mean_std(self.accuracies)

    @property
    def cell(self) -> str:
        s = self.summary
        return format_cell(s.mean, s.std)


def multi_seed(
    model_config: M.ModelConfig,
    train_config: TrainConfig,
    data: DatasetManifest | Mapping[str, ClipSet],
    task: TaskSpec | None = None,
    out_dir=None,
    workers: int = 1,
) -> MultiSeedResult:
    """Train once per seed and summarize test accuracy as mean ± sample std."""
    if len(train_config.seeds) < 2:
        raise ValueError("multi_seed needs at least two seeds")
    accs = []
    for seed in train_config.seeds:
        ckpt, metrics = train(model_config, train_config, data, seed, task, workers)
        accs.append(metrics.test_accuracy)
        if out_dir is not None:
            save_run(ckpt, metrics, Path(out_dir) / f"seed_{seed}")
    result = MultiSeedResult(train_config.seeds, tuple(accs))
    if out_dir is not None:
        s = result.summary
        summary = {"seeds": list(result.seeds), "test_accuracies": accs, "mean": s.mean, "std": s.std, "cell": result.cell}
        (Path(out_dir) / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return result


def save_run(ckpt: Checkpoint, metrics: RunMetrics, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "checkpoint.xc1d")
    metrics.save(out / "metrics.jsonl")
    if metrics.test is not None:
        write_per_class_table(metrics.test, out / "per_class.tsv")


def load_multi_seed(out_dir) -> MultiSeedResult:
    """Recompute the summary from the persisted per-seed metrics files."""
    seeds, accs = [], []
    for path in sorted(Path(out_dir).glob("seed_*/metrics.jsonl"), key=lambda p: int(p.parent.name[5:])):
        summary = json.loads(path.read_text().splitlines()[-1])
        seeds.append(summary["seed"])
        accs.append(summary["test"]["accuracy"])
    return MultiSeedResult(tuple(seeds), tuple(accs))
