"""Unsupervised training of the learned precoders.

The loss of a batch is minus its mean energy efficiency, evaluated with the
same statistical-CSI rate bound the solvers optimize.  Parameters are
updated with Adam.  Everything is driven by integer seeds so two runs with
the same configuration produce identical loss curves.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import ChannelSet, child_seed, draw_channel_set, make_rng
from .records import ResultRecord, histogram
from .system import EEBreakdown, SystemConfig, config_hash, energy_efficiency

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingError",
    "TrainResult",
    "EvalResult",
    "TRAIN_NAMESPACE",
    "TEST_NAMESPACE",
    "make_dataset",
    "batch_loss",
    "batch_loss_and_grad",
    "train",
    "evaluate",
]

log = logging.getLogger(__name__)

TRAIN_NAMESPACE = 1
TEST_NAMESPACE = 2


class TrainingError(RuntimeError):
    def __init__(self, step: int, seed: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step} (channel seed {seed})")
        self.step = step
        self.seed = seed


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    train_draws: int = 10000
    test_draws: int = 1000
    epochs: int = 20
    patience: int = 5  # epochs without a test-EE improvement before stopping
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("batch_size", "train_draws", "test_draws", "epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})

    def update(self, params: dict, grads: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> dict:
        """Return new parameters after one Adam step on ``grads``."""
        self.step += 1
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = beta1 * self.m[k] + (1 - beta1) * g
            self.v[k] = beta2 * self.v[k] + (1 - beta2) * g * g
            m_hat = self.m[k] / (1 - beta1**self.step)
            v_hat = self.v[k] / (1 - beta2**self.step)
            out[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        return out


def make_dataset(sys_cfg: SystemConfig, n_train: int, n_test: int, seed: int):
    """Train and test channel sets drawn from disjoint seed namespaces."""
    kw = dict(dist=sys_cfg.distribution, snr_db=sys_cfg.snr_db, p_max=sys_cfg.p_max)
    geom = sys_cfg.geometry
    train = [draw_channel_set(geom, sys_cfg.k, child_seed(seed, TRAIN_NAMESPACE, i), **kw) for i in range(n_train)]
    test = [draw_channel_set(geom, sys_cfg.k, child_seed(seed, TEST_NAMESPACE, i), **kw) for i in range(n_test)]
    return train, test


def batch_loss(model, batch: list[ChannelSet], pm, bw: float, p_max: float) -> float:
    if not batch:
        raise ValueError("empty batch")
    return -float(np.mean([energy_efficiency(cs, model.precode(cs, pm, bw, p_max), pm, bw).ee for cs in batch]))


def batch_loss_and_grad(model, batch, pm, bw, p_max, step: int = 0) -> tuple[float, dict]:
    """Loss and its parameter gradient, accumulated in batch order."""
    if not batch:
        raise ValueError("empty batch")
    total = {k: np.zeros_like(v) for k, v in model.params.items()}
    ees = []
    for cs in batch:
        ee, g = model.ee_and_grad(cs, pm, bw, p_max)
        if not np.isfinite(ee) or not all(np.all(np.isfinite(x)) for x in g.values()):
            raise TrainingError(step, cs.seed, ee)
        ees.append(ee)
        for k in total:
            total[k] -= g[k]
    n = len(batch)
    return -float(np.mean(ees)), {k: v / n for k, v in total.items()}


@dataclass
class TrainResult:
    params: dict
    loss_curve: list[float]
    test_curve: list[float]  # mean test EE before training and after each epoch
    best_epoch: int
    stopped_early: bool
    wall_time_s: float = 0.0


def train(model, cfg: TrainConfig, train_set, test_set, pm, bw: float, p_max: float,
          checkpoint=None) -> TrainResult:
    """Adam over shuffled mini-batches, keeping the parameters with the best test EE.

    ``checkpoint`` is an optional callable receiving the model whenever the
    best parameters improve.
    """
    if not train_set:
        raise ValueError("empty training set")
    t0 = time.perf_counter()
    adam = AdamState.like(model.params)
    loss_curve: list[float] = []
    best_ee = float(np.mean([energy_efficiency(cs, model.precode(cs, pm, bw, p_max), pm, bw).ee for cs in test_set])) \
        if test_set else -np.inf
    test_curve = [best_ee]
    best_params = {k: v.copy() for k, v in model.params.items()}
    best_epoch, since_best, stopped = 0, 0, False
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = make_rng(cfg.seed, 3, epoch).permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            loss, grads = batch_loss_and_grad(model, batch, pm, bw, p_max, step)
            loss_curve.append(loss)
            model.params = adam.update(model.params, grads, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
            step += 1
        if test_set:
            ee = float(np.mean([energy_efficiency(cs, model.precode(cs, pm, bw, p_max), pm, bw).ee
                                for cs in test_set]))
            test_curve.append(ee)
            log.info("epoch %d: train loss %.6g, test EE %.6g", epoch, loss_curve[-1], ee)
            if ee > best_ee:
                best_ee, best_epoch, since_best = ee, epoch, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
                if checkpoint is not None:
                    checkpoint(model)
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    stopped = True
                    break
        else:
            best_params = {k: v.copy() for k, v in model.params.items()}
            best_epoch = epoch
    model.params = best_params
    return TrainResult(best_params, loss_curve, test_curve, best_epoch, stopped, time.perf_counter() - t0)


@dataclass
class EvalResult:
    breakdowns: list[EEBreakdown]
    ees: np.ndarray
    mean: float
    std: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    records: list[ResultRecord] = field(default_factory=list)


def evaluate(model, test_set, pm, bw: float, p_max: float, *, method: str | None = None,
             sys_cfg: SystemConfig | None = None, bin_width: float | None = None, n_bins: int = 20,
             experiment: str = "evaluate") -> EvalResult:
    """Per-draw EE of ``model`` on ``test_set`` with summary statistics and records."""
    method = method or model.arch
    chash = config_hash({"system": None if sys_cfg is None else sys_cfg.to_dict(), "method": method,
                         "model": getattr(model, "config", dict)()})
    breakdowns, records = [], []
    for cs in test_set:
        t = time.perf_counter()
        b, converged = model.precode_info(cs, pm, bw, p_max)
        dt = max(time.perf_counter() - t, 1e-9)
        br = energy_efficiency(cs, b, pm, bw)
        breakdowns.append(br)
        records.append(ResultRecord(chash, method, int(cs.seed), "draw", 0.0, br.ee, br.sum_rate,
                                    float(np.sum(np.abs(b) ** 2)), dt, bool(converged), experiment))
    ees = np.array([b.ee for b in breakdowns])
    counts, edges = histogram(ees, bin_width, n_bins)
    return EvalResult(breakdowns, ees, float(ees.mean()) if ees.size else float("nan"),
                      float(ees.std()) if ees.size else float("nan"), counts, edges, records)
