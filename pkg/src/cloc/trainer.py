"""Two-phase training: joint margin + representation learning, then frozen margins."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward
from .datagen import Dataset
from .losses import batch_objective
from .margins import MarginSet, OrdinalSchema, init_margins
from .model import Model
from .sampler import BatchSpec, build_batches, epoch_seed

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Optimization cannot continue (e.g. non-finite gradients)."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 500
    phase1_stop_train_accuracy: float = 0.95
    phase2_patience: int = 10
    rho: float = 0.0
    batch_spec: BatchSpec = field(default_factory=BatchSpec)
    seed: int = 0
    margin_mode: str = "per_pair"
    margin_constant: float = 1.0
    fixed_overrides: dict = field(default_factory=dict)
    margin_activation: str = "softplus"
    margin_init: tuple = (0.5, 1.0)
    phase1_early_stop: bool = True
    phase1_only: bool = False
    phase2_max_epochs: int | None = None
    phase2_monitor: str = "train"
    phase2_restore_best: bool = True
    mm_weight: float = 1.0
    hidden: tuple = (64, 64)
    embedding_dim: int = 16
    classifier_hidden: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.batch_spec, dict):
            self.batch_spec = BatchSpec(**self.batch_spec)
        self.fixed_overrides = {int(k): float(v) for k, v in dict(self.fixed_overrides).items()}
        self.margin_init = tuple(float(v) for v in self.margin_init)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.phase1_stop_train_accuracy <= 1:
            raise ValueError("phase1_stop_train_accuracy must be in (0, 1]")
        if self.phase2_patience < 1:
            raise ValueError("phase2_patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.phase2_monitor not in ("train", "val"):
            raise ValueError("phase2_monitor must be 'train' or 'val'")

    def without_precautions(self, init_range=(0.0, 0.1)) -> "TrainConfig":
        """ReLU margin activation, near-zero init, no phase-one early stop."""
        d = self.to_dict()
        d.update(margin_activation="relu", margin_init=tuple(init_range), phase1_early_stop=False)
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixed_overrides"] = {str(k): v for k, v in self.fixed_overrides.items()}
        d["margin_init"] = list(self.margin_init)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- Adam -------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place. Missing grads count as zero."""
    grads = [np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64) for p, g in zip(params, grads)]
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {i} (shape {g.shape})")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    elif len(state.m) != len(params):
        raise ValueError("Adam state was created for a different parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# -- logging ----------------------------------------------------------------------

@dataclass
class EpochRecord:
    phase: int
    epoch: int
    objective: float
    ce: float
    mm: float
    acc: float
    margins: tuple


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    stop_reason: str = ""

    def append(self, rec: EpochRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def last(self) -> EpochRecord | None:
        return self.records[-1] if self.records else None

    def margins_trace(self) -> np.ndarray:
        return np.array([r.margins for r in self.records])

    def to_rows(self) -> list[list]:
        rows = []
        for r in self.records:
            rows.append([r.phase, r.epoch, repr(r.objective), repr(r.ce), repr(r.mm), repr(r.acc),
                         *[repr(float(m)) for m in r.margins]])
        return rows

    def header(self, n_boundaries: int) -> list[str]:
        return ["phase", "epoch", "objective", "ce", "mm", "acc"] + [f"m_{h}" for h in range(1, n_boundaries + 1)]


def write_logs_csv(path, logs: Sequence[TrainLog], notes: dict | None = None) -> None:
    logs = [l for l in logs if l is not None]
    n_b = next((len(l.records[0].margins) for l in logs if l.records), 0)
    with open(path, "w", newline="") as fh:
        for k, v in (notes or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(TrainLog().header(n_b))
        for l in logs:
            w.writerows(l.to_rows())


def read_logs_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    n_b = len(header) - 6
    out = []
    for row in reader:
        out.append(EpochRecord(int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4]),
                               float(row[5]), tuple(float(x) for x in row[6:6 + n_b])))
    return out


# -- training loops ----------------------------------------------------------------

@dataclass
class StepEvent:
    phase: int
    epoch: int
    step: int
    batch_labels: np.ndarray
    margins: np.ndarray
    objective: float


StepCallback = Callable[[StepEvent], None]


def accuracy(model: Model, data: Dataset, labels: np.ndarray | None = None) -> float:
    truth = data.y if labels is None else labels
    return float(np.mean(model.predict(data.X) == truth))


def _run_epoch(model: Model, margins: MarginSet, data: Dataset, cfg: TrainConfig, params, state,
               phase: int, epoch: int, callback: StepCallback | None):
    batches = build_batches(data.y, cfg.batch_spec, seed=epoch_seed(cfg.seed, phase, epoch))
    tot, ce, mm = [], [], []
    for step, b in enumerate(batches):
        for p in params:
            p.zero_grad()
        parts = batch_objective(data.X[b], data.y[b], model, margins, cfg.mm_weight)
        backward(parts.total)
        adam_step(params, [p.grad for p in params], state, cfg.learning_rate)
        tot.append(parts.total.item())
        ce.append(parts.ce.mean())
        mm.append(parts.mm.mean())
        if callback is not None:
            callback(StepEvent(phase, epoch, step, data.y[b].copy(), margins.values(), tot[-1]))
    return float(np.mean(tot)), float(np.mean(ce)), float(np.mean(mm))


def _new_adam(cfg: TrainConfig) -> AdamState:
    return AdamState(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)


def run_phase_one(model: Model, margins: MarginSet, data: Dataset, cfg: TrainConfig,
                  callback: StepCallback | None = None) -> tuple[Model, MarginSet, TrainLog]:
    """Jointly optimize encoder, classifier and learnable margins.

    Stops at ``max_epochs`` or, with early stopping on, once full-training-set
    accuracy reaches ``phase1_stop_train_accuracy`` at an epoch boundary.
    """
    params = model.parameters() + margins.parameters()
    state = _new_adam(cfg)
    log = TrainLog(notes={"phase": 1, "n_margin_params": len(margins.parameters())})
    log.stop_reason = "max_epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        obj, ce, mm = _run_epoch(model, margins, data, cfg, params, state, 1, epoch, callback)
        acc = accuracy(model, data)
        log.append(EpochRecord(1, epoch, obj, ce, mm, acc, tuple(margins.values())))
        if cfg.phase1_early_stop and acc >= cfg.phase1_stop_train_accuracy:
            log.stop_reason = "train_accuracy"
            break
    logger.info("phase one stopped after %d epochs (%s), margins %s", len(log), log.stop_reason,
                np.round(margins.values(), 4))
    return model, margins, log


def run_phase_two(model: Model, frozen: MarginSet, data: Dataset, cfg: TrainConfig,
                  callback: StepCallback | None = None, val_data: Dataset | None = None) -> tuple[Model, TrainLog]:
    """Refine encoder and classifier under fixed margins with patience-based stopping.

    The monitored accuracy (training set, or ``val_data`` when
    ``phase2_monitor == 'val'``) is compared against the phase-one state; the
    best weights are restored at the end when ``phase2_restore_best`` is set.
    Adam moments start fresh.
    """
    if frozen.parameters():
        frozen = frozen.freeze()
    monitor = data
    if cfg.phase2_monitor == "val":
        if val_data is None:
            raise ValueError("phase2_monitor='val' needs val_data")
        monitor = val_data
    params = model.parameters()
    state = _new_adam(cfg)
    log = TrainLog(notes={"phase": 2, "adam_reset": True, "monitor": cfg.phase2_monitor})
    best = accuracy(model, monitor)
    best_state = model.get_state()
    best_epoch = 0
    stale = 0
    max_epochs = cfg.phase2_max_epochs or cfg.max_epochs
    log.stop_reason = "max_epochs"
    for epoch in range(1, max_epochs + 1):
        obj, ce, mm = _run_epoch(model, frozen, data, cfg, params, state, 2, epoch, callback)
        acc = accuracy(model, data)
        log.append(EpochRecord(2, epoch, obj, ce, mm, acc, tuple(frozen.values())))
        watched = acc if monitor is data else accuracy(model, monitor)
        if watched > best:
            best, best_state, best_epoch, stale = watched, model.get_state(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.phase2_patience:
                log.stop_reason = "patience"
                break
    if cfg.phase2_restore_best:
        model.set_state(best_state)
    log.notes.update(best_epoch=best_epoch, best_monitored_accuracy=best)
    return model, log


@dataclass
class TrainResult:
    model: Model
    margins: MarginSet
    phase1: TrainLog
    phase2: TrainLog | None
    phase1_model: Model | None = None

    @property
    def logs(self) -> list[TrainLog]:
        return [l for l in (self.phase1, self.phase2) if l is not None]


def build_initial(data: Dataset, cfg: TrainConfig) -> tuple[Model, MarginSet]:
    schema = OrdinalSchema(data.n_classes)
    model = Model.init(data.n_features, data.n_classes, cfg.hidden, cfg.embedding_dim,
                       cfg.classifier_hidden, seed=[cfg.seed, 0])
    margins = init_margins(schema, cfg.margin_mode, seed=[cfg.seed, 1], rho=cfg.rho,
                           activation=cfg.margin_activation, init_range=cfg.margin_init,
                           constant=cfg.margin_constant, fixed_overrides=cfg.fixed_overrides)
    return model, margins


def train_cloc(data: Dataset, cfg: TrainConfig, callback: StepCallback | None = None,
               val_data: Dataset | None = None, keep_phase1_model: bool = False) -> TrainResult:
    """Initialize, run phase one, freeze the margins, run phase two."""
    model, margins = build_initial(data, cfg)
    model, margins, log1 = run_phase_one(model, margins, data, cfg, callback)
    frozen = margins.freeze()
    snapshot = model.copy() if keep_phase1_model else None
    log2 = None
    if not cfg.phase1_only:
        model, log2 = run_phase_two(model, frozen, data, cfg, callback, val_data)
    return TrainResult(model, frozen, log1, log2, snapshot)
