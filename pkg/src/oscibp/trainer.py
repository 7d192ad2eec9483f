"""Subject-independent training of the grid regressor.

Leave-one-subject-out folds, full-batch gradient descent on an L1
regularized mean squared error, plateau learning-rate decay, and early
stopping with best-weights restoration. Models never see the held-out
subject during training or validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Tensor, add, backward, l1_penalty, mse, scale
from .errors import (
    DivergenceError,
    EmptyBatchError,
    InsufficientDataError,
    InvalidConfigurationError,
    ShapeError,
)
from .model import BpRegressor, ModelConfig, init
from .seeds import STREAM_FOLDS, STREAM_INIT, TARGET_CODES, child_seed

TARGETS = tuple(TARGET_CODES)
OPTIMIZERS = ("gd", "momentum", "adam")

RecordKey = tuple[str, str]


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for one training run.

    ``target`` selects which pressure the model regresses; everything
    else is shared between the systolic and diastolic models.
    """

    target: str = "SBP"
    initial_lr: float = 0.001
    lr_patience: int = 10
    lr_factor: float = 0.1
    early_stop_patience: int = 30
    l1_lambda: float = 1e-4
    max_epochs: int = 500
    seed: int = 0
    optimizer: str = "gd"
    momentum: float = 0.9

    def validate(self) -> None:
        if self.target not in TARGETS:
            raise InvalidConfigurationError(
                f"target must be one of {TARGETS}, got {self.target!r}")
        if not self.initial_lr > 0:
            raise InvalidConfigurationError("initial_lr must be positive")
        if not 0.0 < self.lr_factor < 1.0:
            raise InvalidConfigurationError(
                f"lr_factor must lie strictly between 0 and 1, got {self.lr_factor}")
        if self.lr_patience < 1:
            raise InvalidConfigurationError("lr_patience must be >= 1")
        if self.early_stop_patience < 1:
            raise InvalidConfigurationError("early_stop_patience must be >= 1")
        if self.l1_lambda < 0:
            raise InvalidConfigurationError("l1_lambda must be non-negative")
        if self.max_epochs < 1:
            raise InvalidConfigurationError("max_epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfigurationError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidConfigurationError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class LabeledGrid:
    """One training example: a pressure-indexed pulse grid plus its
    reference systolic and diastolic values."""

    subject_id: str
    record_id: str
    values: np.ndarray
    sbp: float
    dbp: float

    def key(self) -> RecordKey:
        return (self.subject_id, self.record_id)

    def label(self, target: str) -> float:
        if target not in TARGETS:
            raise InvalidConfigurationError(
                f"target must be one of {TARGETS}, got {target!r}")
        return float(self.sbp if target == "SBP" else self.dbp)


@dataclass(frozen=True)
class FoldPlan:
    """Record assignment for one leave-one-subject-out fold.

    Records are addressed as ``(subject_id, record_id)`` pairs. The held
    out subject's records are implied: everything belonging to
    ``test_subject`` is test data and must appear nowhere else.
    """

    fold_id: int
    test_subject: str
    train_records: tuple[RecordKey, ...]
    validation_records: tuple[RecordKey, ...]

    def validate(self) -> None:
        train = set(self.train_records)
        val = set(self.validation_records)
        if len(train) != len(self.train_records):
            raise InvalidConfigurationError("duplicate training records in fold")
        if len(val) != len(self.validation_records):
            raise InvalidConfigurationError("duplicate validation records in fold")
        if train & val:
            raise InvalidConfigurationError(
                "training and validation records overlap")
        used_subjects = {s for s, _ in self.train_records}
        used_subjects |= {s for s, _ in self.validation_records}
        if self.test_subject in used_subjects:
            raise InvalidConfigurationError(
                f"held-out subject {self.test_subject!r} leaks into training")
        val_subjects = [s for s, _ in self.validation_records]
        if len(val_subjects) != len(set(val_subjects)):
            raise InvalidConfigurationError(
                "more than one validation record for a subject")


def loso_folds(dataset: Sequence[LabeledGrid], seed: int) -> list[FoldPlan]:
    """Build one fold per subject, holding that subject out entirely.

    Every other subject contributes one uniformly drawn record to the
    validation set and the rest to training. Subjects with a single
    record go to training only; withholding their record would erase
    them from the fold. The draw is deterministic for a given seed.
    """
    keys = [g.key() for g in dataset]
    if len(set(keys)) != len(keys):
        raise InvalidConfigurationError("duplicate (subject, record) pairs in dataset")
    by_subject: dict[str, list[RecordKey]] = {}
    for key in keys:
        by_subject.setdefault(key[0], []).append(key)
    subjects = sorted(by_subject)
    for s in subjects:
        by_subject[s].sort()
    if len(subjects) < 3:
        raise InsufficientDataError(
            f"leave-one-subject-out needs at least 3 subjects, got {len(subjects)}")
    rng = np.random.default_rng(int(seed))
    folds = []
    for fold_id, held_out in enumerate(subjects):
        train: list[RecordKey] = []
        val: list[RecordKey] = []
        for s in subjects:
            if s == held_out:
                continue
            recs = by_subject[s]
            if len(recs) == 1:
                train.extend(recs)
                continue
            pick = int(rng.integers(len(recs)))
            val.append(recs[pick])
            train.extend(r for i, r in enumerate(recs) if i != pick)
        plan = FoldPlan(fold_id, held_out, tuple(train), tuple(val))
        plan.validate()
        folds.append(plan)
    return folds


def total_loss(model: BpRegressor, batch: tuple[np.ndarray, np.ndarray],
               l1_lambda: float) -> Tensor:
    """Mean squared error over the batch plus ``l1_lambda`` times the sum
    of absolute weight values (biases excluded), as a scalar graph node."""
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 3 or y.ndim != 1:
        raise ShapeError(
            f"expected a (batch, rows, cols) input and 1D targets, "
            f"got {x.shape} and {y.shape}")
    if x.shape[0] == 0:
        raise EmptyBatchError("loss over an empty batch")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} inputs but {y.shape[0]} targets")
    loss = mse(model.forward_graph(x), y)
    if l1_lambda > 0:
        loss = add(loss, scale(l1_penalty(model.weight_tensors()), float(l1_lambda)))
    return loss


# -- parameter updates -------------------------------------------------------


class GradientDescent:
    """Plain full-batch descent: ``w -= lr * grad``."""

    def __init__(self, tensors: Sequence[Tensor]):
        self.tensors = list(tensors)

    def step(self, lr: float) -> None:
        for t in self.tensors:
            t.data = t.data - lr * t.grad


class MomentumDescent:
    """Classical momentum: velocity accumulates gradients."""

    def __init__(self, tensors: Sequence[Tensor], momentum: float = 0.9):
        self.tensors = list(tensors)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(t.data) for t in self.tensors]

    def step(self, lr: float) -> None:
        for t, v in zip(self.tensors, self.velocity):
            v *= self.momentum
            v += t.grad
            t.data = t.data - lr * v


class AdamDescent:
    """Adam with the usual defaults and bias correction."""

    def __init__(self, tensors: Sequence[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = list(tensors)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(t.data) for t in self.tensors]
        self.v = [np.zeros_like(t.data) for t in self.tensors]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for t, m, v in zip(self.tensors, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * t.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * t.grad ** 2
            t.data = t.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, tensors: Sequence[Tensor], momentum: float = 0.9):
    if name == "gd":
        return GradientDescent(tensors)
    if name == "momentum":
        return MomentumDescent(tensors, momentum)
    if name == "adam":
        return AdamDescent(tensors)
    raise InvalidConfigurationError(
        f"optimizer must be one of {OPTIMIZERS}, got {name!r}")


# -- the training loop -------------------------------------------------------


@dataclass
class TrainingHistory:
    """Per-epoch log of one fit. Epochs are numbered from 1.

    ``lr[i]`` is the learning rate in effect after epoch ``i + 1``'s
    plateau adjustment, i.e. the rate the next step will use. A strictly
    plateaued run therefore shows the decayed rate on the epoch that
    completed the patience window.
    """

    train_loss: list[float] = field(default_factory=list)
    val_error: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def validate(self) -> None:
        n = len(self.train_loss)
        if len(self.val_error) != n or len(self.lr) != n:
            raise InvalidConfigurationError("history columns have unequal lengths")
        if self.stopped_epoch != n:
            raise InvalidConfigurationError(
                f"stopped_epoch {self.stopped_epoch} does not match {n} logged epochs")
        if not 1 <= self.best_epoch <= self.stopped_epoch:
            raise InvalidConfigurationError(
                f"best_epoch {self.best_epoch} outside [1, {self.stopped_epoch}]")
        if self.val_error[self.best_epoch - 1] != min(self.val_error):
            raise InvalidConfigurationError(
                "validation error at best_epoch is not the minimum")


def run_training_loop(step: Callable[[float], float],
                      evaluate: Callable[[], float],
                      snapshot: Callable[[], object],
                      restore: Callable[[object], None],
                      config: TrainingConfig) -> TrainingHistory:
    """Drive epochs until early stopping or the epoch budget runs out.

    One epoch is one ``step(lr)`` (a full-batch update returning the
    training loss) followed by one ``evaluate()`` (validation error).
    Both the plateau counter and the stop counter reset whenever a new
    best validation error appears; they run independently otherwise.
    On exit the best-scoring state is restored via ``restore``.
    """
    config.validate()
    lr = config.initial_lr
    best_error = np.inf
    best_state = snapshot()
    history = TrainingHistory()
    plateau = 0
    stall = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        loss = float(step(lr))
        error = float(evaluate())
        if not np.isfinite(loss) or not np.isfinite(error):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch} (train {loss}, validation {error})",
                epoch=epoch)
        if error < best_error:
            best_error = error
            best_state = snapshot()
            history.best_epoch = epoch
            plateau = 0
            stall = 0
        else:
            plateau += 1
            stall += 1
        if plateau >= config.lr_patience:
            lr *= config.lr_factor
            plateau = 0
        history.train_loss.append(loss)
        history.val_error.append(error)
        history.lr.append(lr)
        if stall >= config.early_stop_patience:
            break
    history.stopped_epoch = epoch
    restore(best_state)
    history.validate()
    return history


def _collect(fold_keys: Iterable[RecordKey],
             by_key: dict[RecordKey, LabeledGrid],
             role: str) -> list[LabeledGrid]:
    out = []
    for key in fold_keys:
        if key not in by_key:
            raise InsufficientDataError(
                f"fold {role} record {key} is missing from the dataset")
        out.append(by_key[key])
    if not out:
        raise InsufficientDataError(f"fold has no {role} records")
    return out


def fit(model: BpRegressor, fold: FoldPlan, data: Sequence[LabeledGrid],
        config: TrainingConfig) -> TrainingHistory:
    """Train ``model`` in place on one fold; best weights are restored.

    Training minimizes ``total_loss`` with full-batch updates; the
    validation error is the plain mean squared error on the held-back
    records, with no regularization term.
    """
    config.validate()
    fold.validate()
    by_key = {g.key(): g for g in data}
    train = _collect(fold.train_records, by_key, "training")
    val = _collect(fold.validation_records, by_key, "validation")

    x_train = np.stack([g.values for g in train]).astype(np.float64)
    y_train = np.array([g.label(config.target) for g in train])
    x_val = np.stack([g.values for g in val]).astype(np.float64)
    y_val = np.array([g.label(config.target) for g in val])

    if hasattr(model, "set_output_offset"):
        # start at the predict-the-train-mean solution; see the model docs
        model.set_output_offset(float(y_train.mean()))

    optimizer = make_optimizer(config.optimizer, model.parameters(), config.momentum)

    def step(lr: float) -> float:
        model.zero_grad()
        loss = total_loss(model, (x_train, y_train), config.l1_lambda)
        backward(loss)
        optimizer.step(lr)
        return float(loss.data)

    def evaluate() -> float:
        resid = model.predict_batch(x_val) - y_val
        return float(resid @ resid / resid.shape[0])

    return run_training_loop(step, evaluate, model.state, model.load_state, config)


# -- whole experiments -------------------------------------------------------


@dataclass(frozen=True)
class PredictionRow:
    """One held-out estimate produced during an experiment."""

    run: int
    fold: int
    subject_id: str
    record_id: str
    target: str
    prediction: float
    reference: float


def run_experiment(dataset: Sequence[LabeledGrid], model_config: ModelConfig,
                   training_config: TrainingConfig,
                   n_runs: int = 10,
                   on_fold: Callable | None = None) -> list[PredictionRow]:
    """Repeat the full leave-one-subject-out protocol ``n_runs`` times.

    Each run redraws validation records and model initializations from
    seeds derived off the master seed, so every record is predicted
    exactly once per run and the whole table is reproducible. Returns
    one row per (run, held-out record). ``on_fold(run, fold, model,
    history)``, when given, fires after each fold finishes training.
    """
    model_config.validate()
    training_config.validate()
    if n_runs < 1:
        raise InvalidConfigurationError("n_runs must be >= 1")
    dataset = list(dataset)
    master = training_config.seed
    rows: list[PredictionRow] = []
    for run in range(n_runs):
        folds = loso_folds(dataset, child_seed(master, STREAM_FOLDS, run))
        for fold in folds:
            model = init(model_config,
                         child_seed(master, STREAM_INIT, run, fold.fold_id))
            history = fit(model, fold, dataset, training_config)
            if on_fold is not None:
                on_fold(run, fold, model, history)
            test = [g for g in dataset if g.subject_id == fold.test_subject]
            preds = model.predict_batch(np.stack([g.values for g in test]))
            for g, p in zip(test, preds):
                rows.append(PredictionRow(
                    run=run, fold=fold.fold_id, subject_id=g.subject_id,
                    record_id=g.record_id, target=training_config.target,
                    prediction=float(p),
                    reference=g.label(training_config.target)))
    return rows
