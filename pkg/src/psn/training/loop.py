"""BPTT training loop over column-sequence batches.

Determinism is a hard contract here: with a fixed (seed, config, data) the
whole run, including the emitted history, is bit-identical across
executions. Shuffling derives a fresh generator from (seed, epoch), model
init derives from the spec seed, and nothing else draws randomness.

History is line-delimited text, one record per line:

    epoch<TAB>split<TAB>metric<TAB>value

with the value printed by repr() so floats round-trip exactly. Per epoch
the loop emits train loss, train/test accuracy, per-layer firing rates from
the test pass (metric ``firing_rate.<i>``), the learning rate actually
used, and lambda when a masked PSN is present.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..neurons import lambda_schedule
from ..tensor import Tensor, no_tape, Tape
from .losses import loss_ce_mean, loss_tet
from .model import Model
from .optim import AdamLike, SGDMomentum, resolve_lr

OPTIMIZERS = ("sgd_momentum", "adam_like")
LOSSES = ("ce_mean_output", "tet")
LR_SCHEDULES = ("cosine", "step", "none")


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer_kind: str = "adam_like"
    momentum: float = 0.9
    loss_kind: str = "ce_mean_output"
    label_smoothing: float = 0.0
    lambda_schedule_enabled: bool = True
    lr_schedule: str = "cosine"
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ContractError(
                f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ContractError(
                f"batch size must be >= 1, got {self.batch_size}")
        if self.optimizer_kind not in OPTIMIZERS:
            raise ContractError(
                f"unknown optimizer {self.optimizer_kind!r}")
        if self.loss_kind not in LOSSES:
            raise ContractError(f"unknown loss {self.loss_kind!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ContractError(f"unknown lr schedule {self.lr_schedule!r}")


class History:
    """Ordered (epoch, split, metric, value) records with a text form."""

    def __init__(self, records=None):
        self.records = list(records or [])

    def add(self, epoch, split, metric, value):
        self.records.append((int(epoch), split, metric, float(value)))

    def lines(self):
        return [f"{e}\t{s}\t{m}\t{v!r}" for e, s, m, v in self.records]

    def to_text(self):
        return "\n".join(self.lines()) + "\n"

    @classmethod
    def from_text(cls, text):
        records = []
        for line in text.splitlines():
            if not line.strip():
                continue
            e, s, m, v = line.split("\t")
            records.append((int(e), s, m, float(v)))
        return cls(records)

    def write(self, path):
        dirpath = os.path.dirname(os.path.abspath(path)) or "."
        fd, tmp = tempfile.mkstemp(dir=dirpath, prefix=".hist-")
        try:
            with os.fdopen(fd, "w") as f:
                f.write(self.to_text())
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def series(self, split, metric):
        return [(e, v) for e, s, m, v in self.records
                if s == split and m == metric]


def _loss_fn(cfg):
    return loss_ce_mean if cfg.loss_kind == "ce_mean_output" else loss_tet


def _make_optimizer(model, cfg):
    if cfg.optimizer_kind == "sgd_momentum":
        return SGDMomentum(model.parameters(), cfg.learning_rate,
                           momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)
    return AdamLike(model.parameters(), cfg.learning_rate,
                    weight_decay=cfg.weight_decay)


def evaluate(model, batch, batch_size=256, head=None):
    """Top-1 accuracy plus mean firing rate per neuron layer."""
    head = head or model.spec.head
    inputs = batch.inputs.data
    labels = batch.labels
    n = inputs.shape[1]
    correct = 0
    rate_sums = np.zeros(len(model.neuron_layers()))
    with no_tape():
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            xb = Tensor(inputs[:, start:stop, :])
            logits = model.forward(xb).data
            if head == "per-step":
                votes = logits.argmax(axis=2)  # (T, b)
                num_classes = logits.shape[2]
                pred = np.apply_along_axis(
                    lambda v: np.bincount(v, minlength=num_classes).argmax(),
                    0, votes)
            else:
                pred = logits.mean(axis=0).argmax(axis=1)
            correct += int((pred == labels[start:stop]).sum())
            rates = model.firing_rates()
            rate_sums += np.asarray(rates) * (stop - start)
    return correct / n, list(rate_sums / n)


def train(model_or_spec, train_batch, test_batch, cfg, history=None):
    """Run the full loop; returns the History (also mutated in place)."""
    if isinstance(model_or_spec, Model):
        model = model_or_spec
    else:
        model = Model(model_or_spec, train_batch.num_channels)
    loss_fn = _loss_fn(cfg)
    optimizer = _make_optimizer(model, cfg)
    history = history if history is not None else History()

    inputs = train_batch.inputs.data
    labels = train_batch.labels
    n = inputs.shape[1]
    has_masked = model.masked_lambda() is not None

    for epoch in range(cfg.epochs):
        if has_masked and cfg.lambda_schedule_enabled:
            lam = (lambda_schedule(epoch, cfg.epochs)
                   if cfg.epochs >= 2 else 1.0)
            model.set_masked_lambda(lam)

        lr = resolve_lr(cfg.lr_schedule, cfg.learning_rate, epoch, cfg.epochs)
        optimizer.lr = lr

        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        loss_total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = Tensor(np.ascontiguousarray(inputs[:, idx, :]))
            yb = labels[idx]
            optimizer.zero_grad()
            with Tape() as tape:
                logits = model.forward(xb)
                loss = loss_fn(logits, yb, cfg.label_smoothing)
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    model.raise_divergence(loss_value)
                tape.backward(loss)
            optimizer.step()
            loss_total += loss_value * len(idx)

        train_acc, _ = evaluate(model, train_batch)
        test_acc, test_rates = evaluate(model, test_batch)

        history.add(epoch, "train", "loss", loss_total / n)
        history.add(epoch, "train", "accuracy", train_acc)
        history.add(epoch, "train", "lr", lr)
        history.add(epoch, "test", "accuracy", test_acc)
        for i, rate in enumerate(test_rates):
            history.add(epoch, "test", f"firing_rate.{i}", rate)
        if has_masked:
            history.add(epoch, "train", "lambda", model.masked_lambda())

    return history
