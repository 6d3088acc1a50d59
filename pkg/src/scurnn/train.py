"""Training loop, task adapters and run configuration."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .cayley import build_unitary, grad_A, grad_theta, unitarity_error
from .optim import GroupAssignment, OptimizerSpec, OptimizerState, step_A, step_dense, step_theta
from .rnn import (
    NumericFaultError,
    ScuRnnParams,
    backward,
    cross_entropy_head,
    forward,
    init_params,
    last_step_mask,
    mse_head,
)
from .tasks import (
    COPY_CLASSES,
    COPY_INPUT_DIM,
    adding_baseline,
    copying_baseline,
    find_mnist_files,
    gen_adding,
    gen_copying,
    load_mnist,
)

log = logging.getLogger(__name__)

TASKS = ("copying", "adding", "mnist", "mnist_permuted")
METRICS_COLUMNS = (
    "step",
    "train_loss",
    "eval_metric",
    "baseline",
    "unitarity_error",
    "max_dzbar",
    "flagged_units",
    "wall_seconds",
)


class ConfigError(ValueError):
    pass


class TrainingFault(FloatingPointError):
    """Training hit non-finite values; the run is aborted."""


@dataclass
class TrainConfig:
    task: str = "copying"
    seq_len: int = 100
    hidden: int = 64
    batch: int = 128
    iters: int = 2000
    # For adding/MNIST: when > 0, overrides iters with full passes over the training set.
    epochs: int = 0
    train_size: int = 0  # 0 = task default (adding 100000, MNIST 55000)
    eval_size: int = 1000
    eval_every: int = 100
    opt_a: str = "rmsprop:1e-3"
    opt_d: str = "rmsprop:1e-3"
    opt_other: str = "rmsprop:1e-3"
    seed: int = 0
    data_seed: int = 1
    permute_seed: int | None = None
    data_dir: str | None = None
    out: str | None = "runs/latest"
    clamp_b: bool = False
    h0_range: float = 0.01
    h0_trainable: bool = True
    bias_range: float = 0.01
    probe_threshold: float = 100.0
    # Stop at the first eval row whose metric reaches this value.
    target: float | None = None
    notes: list[str] = field(default_factory=list)

    def validate(self) -> "TrainConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("seq_len", "hidden", "batch", "eval_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.iters < 1 and self.epochs < 1:
            raise ConfigError("need iters >= 1 or epochs >= 1")
        if self.task == "adding" and self.seq_len < 2:
            raise ConfigError("adding task needs seq_len >= 2")
        try:
            self.groups()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.task.startswith("mnist") and not self.data_dir:
            raise ConfigError("MNIST tasks need data_dir")
        return self

    def groups(self) -> GroupAssignment:
        return GroupAssignment(
            OptimizerSpec.parse(self.opt_a),
            OptimizerSpec.parse(self.opt_d),
            OptimizerSpec.parse(self.opt_other),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class Task:
    """Adapter bundling data, loss head and evaluation for one benchmark."""

    m: int
    p: int
    lower_is_better = True
    eval_chunk = 250

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg

    @property
    def baseline(self) -> float:
        return math.nan

    def total_iters(self) -> int:
        return self.cfg.iters

    def train_batch(self, it: int):
        raise NotImplementedError

    def loss(self, y, labels):
        raise NotImplementedError

    def eval_data(self):
        raise NotImplementedError

    def chunk_metric(self, y, labels) -> float:
        return self.loss(y, labels)[0]

    def evaluate(self, params: ScuRnnParams, cache=None) -> float:
        x, labels = self.eval_data()
        total = 0.0
        count = x.shape[0]
        for start in range(0, count, self.eval_chunk):
            sl = slice(start, start + self.eval_chunk)
            y = forward(params, x[sl], cache).y
            total += self.chunk_metric(y, labels[sl]) * y.shape[0]
        return total / count

    def reached(self, metric: float, target: float) -> bool:
        return metric <= target if self.lower_is_better else metric >= target


class CopyingTask(Task):
    m = COPY_INPUT_DIM
    p = COPY_CLASSES

    @property
    def baseline(self):
        return copying_baseline(self.cfg.seq_len)

    def train_batch(self, it):
        batch = gen_copying(self.cfg.seq_len, self.cfg.batch, _derived_seed(self.cfg.data_seed, 0, it))
        return batch.features(), batch.targets

    def loss(self, y, labels):
        return cross_entropy_head(y, labels)

    def eval_data(self):
        if not hasattr(self, "_eval"):
            batch = gen_copying(self.cfg.seq_len, self.cfg.eval_size, _derived_seed(self.cfg.data_seed, 1))
            self._eval = (batch.features(), batch.targets)
        return self._eval


class _EpochTask(Task):
    """Tasks with a fixed training set visited in reshuffled epochs."""

    default_train_size = 0

    @property
    def train_size(self) -> int:
        return self.cfg.train_size or self.default_train_size

    def iters_per_epoch(self) -> int:
        return math.ceil(self.train_size / self.cfg.batch)

    def total_iters(self):
        if self.cfg.epochs > 0:
            return self.cfg.epochs * self.iters_per_epoch()
        return self.cfg.iters

    def batch_indices(self, it):
        per_epoch = self.iters_per_epoch()
        epoch, k = divmod(it, per_epoch)
        if getattr(self, "_order_epoch", None) != epoch:
            rng = np.random.default_rng(_derived_seed(self.cfg.data_seed, 2, epoch))
            self._order = rng.permutation(self.train_size)
            self._order_epoch = epoch
        return self._order[k * self.cfg.batch : (k + 1) * self.cfg.batch]


class AddingTask(_EpochTask):
    m = 2
    p = 1
    default_train_size = 100_000

    @property
    def baseline(self):
        return adding_baseline()

    def _train(self):
        if not hasattr(self, "_train_set"):
            self._train_set = gen_adding(self.cfg.seq_len, self.train_size, _derived_seed(self.cfg.data_seed, 0))
            self._train_x = self._train_set.features()
        return self._train_set, self._train_x

    def train_batch(self, it):
        data, x = self._train()
        idx = self.batch_indices(it)
        return x[idx], data.targets[idx]

    def loss(self, y, targets):
        batch, steps, _ = y.shape
        full = np.zeros_like(y)
        full[:, -1, 0] = targets
        return mse_head(y, full, last_step_mask(batch, steps))

    def eval_data(self):
        if not hasattr(self, "_eval"):
            data = gen_adding(self.cfg.seq_len, self.cfg.eval_size, _derived_seed(self.cfg.data_seed, 1))
            self._eval = (data.features(), data.targets)
        return self._eval


class MnistTask(_EpochTask):
    m = 1
    p = 10
    lower_is_better = False
    eval_chunk = 100
    default_train_size = 55_000

    def __init__(self, cfg):
        super().__init__(cfg)
        perm_seed = cfg.permute_seed
        if cfg.task == "mnist_permuted" and perm_seed is None:
            perm_seed = 0
        if cfg.task == "mnist":
            perm_seed = None
        self.train_set = load_mnist(*find_mnist_files(cfg.data_dir, "train"), permutation_seed=perm_seed)
        self.test_set = load_mnist(*find_mnist_files(cfg.data_dir, "test"), permutation_seed=perm_seed)
        if self.train_size > len(self.train_set):
            raise ConfigError(f"train_size {self.train_size} exceeds {len(self.train_set)} training images")
        if cfg.eval_size > len(self.test_set):
            raise ConfigError(f"eval_size {cfg.eval_size} exceeds {len(self.test_set)} test images")

    def train_batch(self, it):
        idx = self.batch_indices(it)
        return self.train_set.sequences(idx), self.train_set.labels[idx]

    def loss(self, y, labels):
        return cross_entropy_head(y, labels)

    def eval_data(self):
        idx = np.arange(self.cfg.eval_size)
        return self.test_set.sequences(idx), self.test_set.labels[idx]

    def chunk_metric(self, y, labels):
        return float(np.mean(np.argmax(y[:, -1, :], axis=1) == labels))


def make_task(cfg: TrainConfig) -> Task:
    if cfg.task == "copying":
        return CopyingTask(cfg)
    if cfg.task == "adding":
        return AddingTask(cfg)
    return MnistTask(cfg)


def initial_params(cfg: TrainConfig, task: Task) -> ScuRnnParams:
    return init_params(
        cfg.hidden, task.m, task.p, cfg.seed, h0_range=cfg.h0_range, bias_range=cfg.bias_range
    )


@dataclass
class TrainResult:
    params: ScuRnnParams
    rows: list[dict]
    stopped_early: bool = False

    @property
    def final_metric(self) -> float:
        return self.rows[-1]["eval_metric"]


def _fmt(value):
    return repr(float(value)) if isinstance(value, float) else str(value)


def train(cfg: TrainConfig, task: Task | None = None, params: ScuRnnParams | None = None) -> TrainResult:
    """Run the full training loop and write artifacts into ``cfg.out``.

    Each iteration rebuilds ``W`` from ``(A, theta)``, runs forward, the
    loss head and BPTT, maps ``dL/dW`` onto ``A`` and ``theta`` and steps
    the three optimizer groups.
    """
    cfg.validate()
    task = task or make_task(cfg)
    params = params or initial_params(cfg, task)
    groups = cfg.groups()
    opt_a = OptimizerState.from_spec(groups.group_A)
    opt_d = OptimizerState.from_spec(groups.group_D)
    opt_other = OptimizerState.from_spec(groups.group_other)
    if not cfg.h0_trainable:
        params.h0_re[:] = 0.0
        params.h0_im[:] = 0.0

    writer = None
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        metrics_fh = open(os.path.join(cfg.out, "metrics.csv"), "w", newline="")
        writer = csv.writer(metrics_fh)
        writer.writerow(METRICS_COLUMNS)

    rows: list[dict] = []

    def emit(row):
        rows.append(row)
        if writer is not None:
            writer.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
            metrics_fh.flush()

    total = task.total_iters()
    start = time.perf_counter()
    losses: list[float] = []
    tape = None
    stopped = False
    try:
        for it in range(total):
            x, labels = task.train_batch(it)
            cache = build_unitary(params.a, params.theta)
            try:
                tape = forward(params, x, cache)
            except NumericFaultError as exc:
                emit(_fault_row(it, losses, task, exc.report.overall_max_dzbar,
                                exc.report.flagged_units, cache, start))
                raise TrainingFault(str(exc)) from exc
            loss, dy = task.loss(tape.y, labels)
            grads = backward(tape, params, dy)
            g_a = grad_A(grads.dLdW, params.a, params.theta, cache)
            g_theta = grad_theta(grads.dLdW, cache, params.theta)
            if not (math.isfinite(loss) and grads.all_finite()
                    and np.all(np.isfinite(g_a)) and np.all(np.isfinite(g_theta))):
                report = tape.probe(params.b, cfg.probe_threshold)
                emit(_fault_row(it, losses, task, report.overall_max_dzbar,
                                report.flagged_units, cache, start))
                raise TrainingFault(f"non-finite loss or gradient at iteration {it}")
            losses.append(loss)

            step_theta(params.theta, g_theta, opt_d)
            step_A(params.a, g_a, opt_a)
            dense = params.dense()
            dense_grads = grads.dense()
            if not cfg.h0_trainable:
                for name in ("h0_re", "h0_im"):
                    dense.pop(name)
                    dense_grads.pop(name)
            step_dense(dense, dense_grads, opt_other)
            if cfg.clamp_b:
                np.minimum(params.b, 0.0, out=params.b)

            step = it + 1
            if step % cfg.eval_every == 0 or step == total:
                new_cache = build_unitary(params.a, params.theta)
                metric = task.evaluate(params, new_cache)
                report = tape.probe(params.b, cfg.probe_threshold)
                emit({
                    "step": step,
                    "train_loss": float(np.mean(losses)),
                    "eval_metric": float(metric),
                    "baseline": float(task.baseline),
                    "unitarity_error": unitarity_error(new_cache.w),
                    "max_dzbar": report.overall_max_dzbar,
                    "flagged_units": report.flagged_units,
                    "wall_seconds": round(time.perf_counter() - start, 3),
                })
                log.info("step %d loss %.5f eval %.5f", step, np.mean(losses), metric)
                losses = []
                if cfg.target is not None and task.reached(metric, cfg.target):
                    stopped = True
                    break
    finally:
        if writer is not None:
            metrics_fh.close()
            if rows and math.isfinite(rows[-1]["eval_metric"]):
                checkpoint.save(os.path.join(cfg.out, "checkpoint.scur"), params)
    return TrainResult(params, rows, stopped)


def _fault_row(it, losses, task, max_dzbar, flagged, cache, start):
    return {
        "step": it + 1,
        "train_loss": float(np.mean(losses)) if losses else math.nan,
        "eval_metric": math.nan,
        "baseline": float(task.baseline),
        "unitarity_error": unitarity_error(cache.w),
        "max_dzbar": float(max_dzbar),
        "flagged_units": int(flagged),
        "wall_seconds": round(time.perf_counter() - start, 3),
    }


def run_eval(checkpoint_path, cfg: TrainConfig, task: Task | None = None) -> dict:
    """Evaluate a saved checkpoint on the task's test split."""
    cfg.validate()
    task = task or make_task(cfg)
    params = checkpoint.load(checkpoint_path, expect=(cfg.hidden, task.m, task.p))
    cache = build_unitary(params.a, params.theta)
    return {
        "eval_metric": float(task.evaluate(params, cache)),
        "unitarity_error": unitarity_error(cache.w),
    }
