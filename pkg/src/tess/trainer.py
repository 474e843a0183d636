"""Epoch loop, evaluation, metrics CSV and checkpoint bookkeeping."""

from __future__ import annotations

import csv
import logging
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tess import checkpoint as ckpt_io
from tess.config import RunConfig
from tess.core import LifParams, OpCounter
from tess.data import SpikeDataset, load_source
from tess.errors import ConfigError, NumericError
from tess.learning import AdamHyper, LayerOptimizer, PlateauScheduler
from tess.network import (
    Network,
    cross_entropy,
    forward_sequence,
    parse_layers,
    preset_specs,
    train_sequence,
)
from tess.traces import TraceParams

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "split", "loss", "accuracy", "lr", "wall_seconds", "lsg_macs", "trace_scalars")


@dataclass(frozen=True)
class Seeds:
    data: int
    init: np.random.Generator
    shuffle: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> Seeds:
        data, init, shuffle = np.random.SeedSequence(seed).spawn(3)
        return cls(int(data.generate_state(1)[0]), np.random.default_rng(init), np.random.default_rng(shuffle))


def load_splits(cfg: RunConfig, data_seed: int) -> tuple[SpikeDataset, SpikeDataset, SpikeDataset]:
    dataset = load_source(cfg["data.source"], cfg["data.noise"], cfg["data.samples"], data_seed)
    return dataset.split(data_seed)


def build_network(cfg: RunConfig, frame_shape: tuple[int, ...], num_classes: int,
                  seed: int | np.random.Generator = 0) -> Network:
    if cfg["model.layers"]:
        specs = parse_layers(cfg["model.layers"])
    else:
        specs = preset_specs(cfg["model.preset"], num_classes, cfg["model.hidden"])
    return Network(
        frame_shape,
        specs,
        num_classes,
        lif=LifParams(cfg["lif.gamma"], cfg["lif.v_th"], cfg["lif.psi_amplitude"]),
        trace=TraceParams(
            cfg["trace.lambda_pre"], cfg["trace.lambda_post"],
            cfg["trace.alpha_pre"], cfg["trace.alpha_post"],
        ),
        t_l=cfg["learn.t_l"],
        task=cfg["learn.task"],
        seed=seed,
        hidden_basis=cfg["basis.hidden"],
        head_basis=cfg["basis.head"],
    )


def make_optimizer(cfg: RunConfig, net: Network) -> LayerOptimizer:
    hyper = AdamHyper(cfg["optim.lr"], cfg["optim.beta1"], cfg["optim.beta2"], cfg["optim.eps"])
    return LayerOptimizer([w.shape for w in net.weights], hyper, cfg["optim.name"], cfg["learn.direction"])


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    return np.eye(classes)[labels]


def evaluate(net: Network, data: SpikeDataset, batch_size: int) -> tuple[float, float]:
    """Mean cross-entropy of time-averaged head scores, and accuracy."""
    if len(data) == 0:
        return 0.0, 0.0
    loss = 0.0
    correct = 0
    for start in range(0, len(data), batch_size):
        x = data.inputs[start:start + batch_size]
        y = data.labels[start:start + batch_size]
        out = forward_sequence(net, x)
        loss += float(cross_entropy(out.class_scores, y, data.T).sum())
        correct += int((out.predictions == y).sum())
    return loss / len(data), correct / len(data)


def train_batch(net: Network, optimizer: LayerOptimizer, x: np.ndarray, y: np.ndarray,
                update_mode: str, counter: OpCounter, threads: int = 1) -> None:
    if threads == 1:
        train_sequence(net, x, y, optimizer, update_mode, counter)
        return
    if update_mode != "per-sequence":
        raise ConfigError("train.threads > 1 requires learn.update_mode = per-sequence")
    chunks = [c for c in np.array_split(np.arange(len(x)), threads) if len(c)]
    counters = [OpCounter() for _ in chunks]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        results = list(pool.map(
            lambda job: train_sequence(net, x[job[0]], y[job[0]], None, update_mode, job[1]),
            zip(chunks, counters),
        ))
    # fixed chunk order keeps the reduction deterministic
    totals = [sum(parts) for parts in zip(*(r.updates for r in results))]
    for c in counters:
        counter.lsg_macs += c.lsg_macs
        counter.lif_steps.update(c.lif_steps)
    if x.shape[1] > net.t_l:
        with np.errstate(over="ignore", invalid="ignore"):
            new = optimizer.step(net.weights, [t / len(x) for t in totals])
        for i, w in enumerate(new):
            if not np.all(np.isfinite(w)):
                raise NumericError(f"non-finite weights in layer {i} after update")
        net.set_weights(new)


@dataclass
class TrainSummary:
    out_dir: Path
    final_train_accuracy: float
    final_val_accuracy: float
    test_accuracy: float
    best_val_accuracy: float
    lsg_macs: int
    samples_seen: int


def _fmt(value: float) -> str:
    return format(value, ".10g")


def make_checkpoint(cfg: RunConfig, net: Network, optimizer: LayerOptimizer, seeds: Seeds,
                    scheduler: PlateauScheduler, epoch: int) -> ckpt_io.Checkpoint:
    step = optimizer.states[0].step if optimizer.states else 0
    return ckpt_io.Checkpoint(
        config_text=cfg.to_text(),
        weights=[w.copy() for w in net.weights],
        optimizer_step=step,
        moments=[(s.m.copy(), s.v.copy()) for s in optimizer.states] if optimizer.name == "adam" else None,
        rng_state=seeds.shuffle.bit_generator.state,
        lr=optimizer.lr,
        best_metric=scheduler.best,
        bad_epochs=scheduler.bad_epochs,
        epoch=epoch,
    )


def run_training(cfg: RunConfig, out_dir: str | Path | None = None,
                 progress: Callable[[str], None] | None = None) -> TrainSummary:
    """Train per ``cfg`` and write metrics.csv, config.txt, best.ckpt and final.ckpt."""
    out = Path(out_dir if out_dir is not None else cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    seeds = Seeds.from_seed(cfg["train.seed"])
    train_set, val_set, test_set = load_splits(cfg, seeds.data)
    net = build_network(cfg, train_set.frame_shape, train_set.num_classes, seeds.init)
    optimizer = make_optimizer(cfg, net)
    scheduler = PlateauScheduler(cfg["optim.lr"], cfg["sched.factor"], cfg["sched.patience"])
    counter = OpCounter()
    batch_size = cfg["train.batch_size"]
    record_time = cfg["metrics.wall_time"]
    started = time.perf_counter()
    trace_scalars = net.trace_scalars()
    samples_seen = 0
    best_val = -1.0

    metrics_file = (out / "metrics.csv").open("w", newline="")
    writer = csv.writer(metrics_file, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)

    def log_row(epoch: int, split: str, loss: float, acc: float) -> None:
        wall = time.perf_counter() - started if record_time else 0.0
        writer.writerow((epoch, split, _fmt(loss), _fmt(acc), _fmt(optimizer.lr), f"{wall:.3f}",
                         counter.lsg_macs, trace_scalars))
        metrics_file.flush()

    try:
        train_loss, train_acc = evaluate(net, train_set, batch_size)
        val_loss, val_acc = evaluate(net, val_set, batch_size)
        log_row(0, "train", train_loss, train_acc)
        log_row(0, "val", val_loss, val_acc)
        best_val = val_acc
        ckpt_io.save(out / "best.ckpt", make_checkpoint(cfg, net, optimizer, seeds, scheduler, 0))

        for epoch in range(1, cfg["train.epochs"] + 1):
            order = seeds.shuffle.permutation(len(train_set))
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                x = train_set.inputs[idx]
                y = one_hot(train_set.labels[idx], train_set.num_classes)
                try:
                    train_batch(net, optimizer, x, y, cfg["learn.update_mode"], counter, cfg["train.threads"])
                except NumericError as exc:
                    raise NumericError(f"epoch {epoch}, batch at sample {start}: {exc}") from exc
                samples_seen += len(idx)
            train_loss, train_acc = evaluate(net, train_set, batch_size)
            val_loss, val_acc = evaluate(net, val_set, batch_size)
            log_row(epoch, "train", train_loss, train_acc)
            log_row(epoch, "val", val_loss, val_acc)
            optimizer.lr = scheduler.step(val_acc)
            if val_acc > best_val:
                best_val = val_acc
                ckpt_io.save(out / "best.ckpt", make_checkpoint(cfg, net, optimizer, seeds, scheduler, epoch))
            if progress is not None:
                progress(f"epoch {epoch}: train {train_acc:.4f} val {val_acc:.4f} lr {optimizer.lr:g}")

        test_loss, test_acc = evaluate(net, test_set, batch_size)
        log_row(cfg["train.epochs"], "test", test_loss, test_acc)
    finally:
        metrics_file.close()

    ckpt_io.save(out / "final.ckpt",
                 make_checkpoint(cfg, net, optimizer, seeds, scheduler, cfg["train.epochs"]))
    return TrainSummary(out, train_acc, val_acc, test_acc, best_val, counter.lsg_macs, samples_seen)


def restore(checkpoint: ckpt_io.Checkpoint, cfg: RunConfig | None = None):
    """Rebuild the network (and its data splits) described by a checkpoint."""
    cfg = cfg or RunConfig.from_text(checkpoint.config_text, "<checkpoint>")
    seeds = Seeds.from_seed(cfg["train.seed"])
    splits = load_splits(cfg, seeds.data)
    net = build_network(cfg, splits[0].frame_shape, splits[0].num_classes, seeds.init)
    net.set_weights(checkpoint.weights)
    return cfg, net, splits
