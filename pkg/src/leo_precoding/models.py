"""Uniform wrappers around the two learned precoders, plus checkpoints.

Both wrappers expose ``params`` as ``dict[str, ndarray]``, ``precode`` and
``ee_and_grad`` so training and evaluation code need not know which
architecture it is driving.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelSet
from .e2e import E2EConfig, e2e_ee_and_grad, init_e2e_params, precode_e2e
from .system import PowerModel, energy_efficiency
from .unfolded import UnfoldedParams, precode_unfolded, unfolded_ee_and_grad

__all__ = [
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "UnfoldedModel",
    "E2EModel",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "leo-precoding-checkpoint"
CHECKPOINT_VERSION = 1
# how the unfolded layers build their coefficient matrix
T_DEFINITION = "t=M@f per layer"


@dataclass
class UnfoldedModel:
    n_layers: int = 3
    activation: str = "identity"
    init: str = "scaled"
    eps1: float = 1e-5
    eps2: float = 1e-5
    max_outer: int = 100
    max_inner: int = 500
    start: str = "exact_taylor"
    params: dict = field(default=None)

    arch = "unfolded"

    def __post_init__(self):
        if self.params is None:
            if self.start == "exact_taylor":
                p = UnfoldedParams.exact_taylor(self.n_layers)
            elif self.start == "zeros":
                p = UnfoldedParams.zeros(self.n_layers)
            else:
                raise ValueError(f"unknown start {self.start!r}")
            self.params = {"theta": p.values}
        UnfoldedParams(self.params["theta"])  # validates shape and finiteness

    def config(self) -> dict:
        return {k: getattr(self, k) for k in
                ("n_layers", "activation", "init", "eps1", "eps2", "max_outer", "max_inner", "start")}

    def _solve(self, cs, pm, bw, p_max):
        return precode_unfolded(
            cs, pm, bw, p_max, UnfoldedParams(self.params["theta"]), self.eps1, self.eps2,
            activation=self.activation, init=self.init, max_outer=self.max_outer, max_inner=self.max_inner,
            return_result=True,
        )

    def precode(self, cs: ChannelSet, pm: PowerModel, bw: float, p_max: float) -> np.ndarray:
        return self._solve(cs, pm, bw, p_max).b

    def precode_info(self, cs, pm, bw, p_max) -> tuple[np.ndarray, bool]:
        res = self._solve(cs, pm, bw, p_max)
        return res.b, res.converged

    def ee_and_grad(self, cs, pm, bw, p_max) -> tuple[float, dict]:
        res = self._solve(cs, pm, bw, p_max)
        _, g = unfolded_ee_and_grad(cs, res, UnfoldedParams(self.params["theta"]), pm, bw, p_max,
                                    self.activation, self.init)
        return energy_efficiency(cs, res.b, pm, bw).ee, {"theta": g}


@dataclass
class E2EModel:
    cfg: E2EConfig = field(default_factory=E2EConfig)
    seed: int = 0
    params: dict = field(default=None)

    arch = "e2e"

    def __post_init__(self):
        if self.params is None:
            self.params = init_e2e_params(self.cfg, self.seed)

    def config(self) -> dict:
        return {**asdict(self.cfg), "seed": self.seed}

    def precode(self, cs, pm, bw, p_max) -> np.ndarray:
        return precode_e2e(cs, self.params, self.cfg, p_max)

    def precode_info(self, cs, pm, bw, p_max) -> tuple[np.ndarray, bool]:
        return self.precode(cs, pm, bw, p_max), True

    def ee_and_grad(self, cs, pm, bw, p_max) -> tuple[float, dict]:
        _, g = e2e_ee_and_grad(cs, self.params, self.cfg, pm, bw, p_max)
        return energy_efficiency(cs, self.precode(cs, pm, bw, p_max), pm, bw).ee, g


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "config": model.config(),
        "params": {k: {"shape": list(v.shape), "data": np.asarray(v, float).ravel().tolist()}
                   for k, v in model.params.items()},
        "extra": extra or {},
    }
    if model.arch == "unfolded":
        doc["t_definition"] = T_DEFINITION
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a precoder checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
    cfg = dict(doc["config"])
    if doc["arch"] == "unfolded":
        if doc.get("t_definition") != T_DEFINITION:
            raise ValueError(f"{path}: incompatible unfolded layer definition")
        return UnfoldedModel(**cfg, params=params)
    if doc["arch"] == "e2e":
        seed = cfg.pop("seed")
        return E2EModel(cfg=E2EConfig(**cfg), seed=seed, params=params)
    raise ValueError(f"{path}: unknown architecture {doc['arch']!r}")
