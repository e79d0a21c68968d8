"""Training-time pruning loop on the synthetic dataset.

Each epoch: read the schedules for ``t``, train one pass with hard
filters' gradients masked, then score, reselect and mask every prunable
layer on the post-update weights.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .arch import build_arch, count_flops
from .config import RunConfig, config_to_text
from .data import SyntheticDataset, make_dataset
from .network import Network
from .pruning import (FilterMask, FilterState, PruneState, apply_grad_mask, prune_step,
                      schedule_at)
from .tensor import SgdConfig, sgd_step, softmax_cross_entropy

log = logging.getLogger(__name__)

METRICS_HEADER = ["t", "train_loss", "test_acc", "alpha", "lambda_h", "rate",
                  "hard_counts", "soft_counts", "masked_flops"]


class NaNLossError(RuntimeError):
    pass


@dataclass
class EpochMetrics:
    t: int
    train_loss: float
    test_acc: float
    alpha: float
    lambda_h: float
    rate: list[float]
    hard_counts: list[int]
    soft_counts: list[int]
    masked_flops: int

    def row(self) -> list[str]:
        join = lambda xs: ";".join(repr(x) for x in xs)
        return [str(self.t), repr(self.train_loss), repr(self.test_acc), repr(self.alpha),
                repr(self.lambda_h), join(self.rate), join(self.hard_counts),
                join(self.soft_counts), str(self.masked_flops)]


@dataclass
class RunResult:
    network: Network
    mask: FilterMask
    state: Optional[PruneState]
    metrics: list[EpochMetrics] = field(default_factory=list)
    config: Optional[RunConfig] = None

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in self.metrics:
            w.writerow(m.row())
        return buf.getvalue()

    def checkpoint(self) -> ckpt_io.Checkpoint:
        text = config_to_text(self.config) if self.config is not None else ""
        return ckpt_io.Checkpoint(self.network, self.mask, self.state, text)


def _nonfinite_layer(net: Network) -> str:
    for name, p in net.parameters():
        if not np.isfinite(p.data).all() or (p.grad is not None and not np.isfinite(p.grad).all()):
            return name
    return "<logits>"


def evaluate(net: Network, data: SyntheticDataset) -> float:
    return float((net.predict(data.images) == data.labels).mean())


def evaluate_loss(net: Network, data: SyntheticDataset) -> float:
    loss, _ = softmax_cross_entropy(net(data.images), data.labels)
    return loss


def epoch_train(net: Network, data: SyntheticDataset, sgd: SgdConfig, mask: FilterMask,
                velocity: dict[str, np.ndarray], rng: np.random.Generator,
                batch_size: int = 64, epoch: int = 0) -> float:
    """One shuffled pass of SGD; hard filters get zero gradient. Returns mean batch loss."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    params = list(net.parameters())
    order = rng.permutation(len(data))
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        logits = net(data.images[idx])
        loss, dlogits = softmax_cross_entropy(logits, data.labels[idx])
        if not np.isfinite(loss):
            raise NaNLossError(f"non-finite loss at epoch {epoch}, layer {_nonfinite_layer(net)}")
        net.zero_grad()
        net.backward(dlogits)
        for lid, states in mask.items():
            apply_grad_mask(net.weights[lid].grad, states)
        sgd_step([p.data for _, p in params], [p.grad for _, p in params],
                 [velocity[name] for name, _ in params], sgd)
        losses.append(loss)
    return float(np.mean(losses))


def _seeded(cfg: RunConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream])


def run_ghfp(cfg: RunConfig, prune: bool = True, snapshot=None, after_train=None) -> RunResult:
    """Train ``cfg.epochs`` epochs, pruning after each one.

    ``prune=False`` skips the selection step entirely (plain SGD).
    ``snapshot(t, net, mask)`` is called after every epoch if given;
    ``after_train(t, net, mask)`` between training and reselection.
    """
    arch = build_arch(cfg.arch, cfg.classes)
    train, test = make_dataset(cfg.seed, cfg.classes, cfg.n_train, cfg.n_test,
                               cfg.noise, cfg.contrast)
    sgd = cfg.sgd
    if cfg.pretrained:
        net = ckpt_io.load(cfg.pretrained).network
        if net.arch != arch:
            raise ValueError(f"pretrained checkpoint {cfg.pretrained} has a different architecture")
        sgd = SgdConfig(sgd.learning_rate / 10, sgd.momentum, sgd.weight_decay)
    else:
        net = Network.init(arch, _seeded(cfg, 0).integers(2**63))
    velocity = {name: np.zeros_like(p.data) for name, p in net.parameters()}
    mask = FilterMask.all_active({lid: arch[lid].out_channels for lid in arch.prunable})
    shuffle = _seeded(cfg, 1)
    sched = cfg.schedule
    result = RunResult(net, mask, None, config=cfg)

    for t in range(cfg.epochs):
        state = schedule_at(sched, arch.prunable, t)
        loss = epoch_train(net, train, sgd, mask, velocity, shuffle, cfg.batch_size, epoch=t)
        if after_train is not None:
            after_train(t, net, mask)
        if prune:
            prune_step({lid: net.weights[lid].data for lid in mask}, mask, state, sched.criterion)
            for lid, states in mask.items():
                velocity[lid][states == FilterState.HARD] = 0.0
            result.state = state
        rates = [state.rates[l] for l in arch.prunable] if prune else [0.0] * len(arch.prunable)
        counts = [mask.counts(l) for l in arch.prunable]
        flops = count_flops(arch, dict(zip(arch.prunable, rates)), channels="integer").total
        m = EpochMetrics(t, loss, evaluate(net, test), state.alpha if prune else 0.0,
                         state.lambda_h if prune else 0.0, rates,
                         [h for h, _ in counts], [s for _, s in counts], int(flops))
        result.metrics.append(m)
        log.info("t=%d loss=%.4f acc=%.4f alpha=%.4g lambda_h=%.4f", t, m.train_loss,
                 m.test_acc, m.alpha, m.lambda_h)
        if snapshot is not None:
            snapshot(t, net, mask)

    if cfg.metrics_path:
        Path(cfg.metrics_path).write_text(result.metrics_csv())
    if cfg.checkpoint_path:
        ckpt_io.save(cfg.checkpoint_path, result.checkpoint())
    return result


def _seed_path(path: Optional[str], seed: int) -> Optional[str]:
    if not path:
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}_seed{seed}{p.suffix}"))


def _run_for_sweep(cfg: RunConfig) -> str:
    return run_ghfp(cfg).metrics_csv()


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("PRUNEKIT_THREADS", "1")))
    except ValueError:
        return 1


def run_sweep(cfg: RunConfig, seeds: Sequence[int], workers: Optional[int] = None) -> list[str]:
    """Independent runs over ``seeds``; per-seed output paths get a ``_seed<k>`` suffix."""
    cfgs = [cfg.replace(seed=s, metrics_path=_seed_path(cfg.metrics_path, s),
                        checkpoint_path=_seed_path(cfg.checkpoint_path, s)) for s in seeds]
    workers = min(workers or max_workers(), len(cfgs))
    if workers <= 1:
        return [_run_for_sweep(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_for_sweep, cfgs))
