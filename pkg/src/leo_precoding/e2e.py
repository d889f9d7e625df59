"""End-to-end edge GNN on the antenna-user bipartite graph.

Edge ``(n, k)`` starts with the real and imaginary parts of
``sqrt(gamma_k) v_k[n]``, scaled by ``sqrt(N_t)`` so entries are O(1).  A
layer updates every edge from three two-layer perceptrons shared by all
edges::

    agg_ant[n, k]  = sum_{n' != n} MLP1(a[n', k])
    agg_user[n, k] = sum_{k' != k} MLP2(a[n, k'])
    a'[n, k]       = MLP3([a[n, k], agg_ant[n, k], agg_user[n, k]])

with a ReLU after MLP3 on every layer but the last.  The last layer emits
two features per edge, read as ``Re/Im b_k[n]`` and projected onto the
power budget.  Parameters live in a flat ``dict[str, ndarray]`` so the
optimizer and checkpoint code can treat both learned models alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, make_rng
from .system import PowerModel, energy_efficiency_grad, project_power, project_power_backward

__all__ = [
    "E2EConfig",
    "E2ETape",
    "NumericError",
    "edge_features",
    "init_e2e_params",
    "e2e_forward",
    "e2e_backward",
    "e2e_flops",
    "precode_e2e",
    "e2e_ee_and_grad",
]

AGGREGATORS = ("sum", "mean")


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class E2EConfig:
    n_layers: int = 3
    edge_dim: int = 16  # hidden edge-feature width between layers
    mlp_hidden: int = 64
    aggregator: str = "sum"

    def __post_init__(self):
        if self.n_layers < 1 or self.edge_dim < 1 or self.mlp_hidden < 1:
            raise ValueError("layer count and widths must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")

    def dims(self) -> list[tuple[int, int]]:
        """``(input, output)`` edge-feature widths of each layer."""
        widths = [2] + [self.edge_dim] * (self.n_layers - 1) + [2]
        return list(zip(widths[:-1], widths[1:]))


def edge_features(cs: ChannelSet) -> np.ndarray:
    x = cs.effective_channel() * np.sqrt(cs.n_t)
    return np.stack([x.real, x.imag], axis=-1)


def _mlp_shapes(cfg: E2EConfig):
    for ell, (d_in, d_out) in enumerate(cfg.dims()):
        h = cfg.mlp_hidden
        e = cfg.edge_dim
        for name, fan_in, fan_out in (("mlp1", d_in, e), ("mlp2", d_in, e), ("mlp3", d_in + 2 * e, d_out)):
            yield f"l{ell}.{name}", fan_in, h, fan_out


def init_e2e_params(cfg: E2EConfig, seed: int) -> dict[str, np.ndarray]:
    """He-uniform weights, zero biases."""
    rng = make_rng(seed, 0xE2E)
    params = {}
    for prefix, fan_in, h, fan_out in _mlp_shapes(cfg):
        params[f"{prefix}.w1"] = rng.uniform(-1, 1, (fan_in, h)) * np.sqrt(6.0 / fan_in)
        params[f"{prefix}.b1"] = np.zeros(h)
        params[f"{prefix}.w2"] = rng.uniform(-1, 1, (h, fan_out)) * np.sqrt(6.0 / h)
        params[f"{prefix}.b2"] = np.zeros(fan_out)
    return params


def _mlp(params, prefix, x):
    h = x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"]
    r = np.maximum(h, 0.0)
    return r @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"], (x, h, r)


def _mlp_backward(params, prefix, cache, gy, grads):
    x, h, r = cache
    grads[f"{prefix}.w2"] += np.tensordot(r, gy, axes=([0, 1], [0, 1]))
    grads[f"{prefix}.b2"] += gy.sum(axis=(0, 1))
    gh = (gy @ params[f"{prefix}.w2"].T) * (h > 0)
    grads[f"{prefix}.w1"] += np.tensordot(x, gh, axes=([0, 1], [0, 1]))
    grads[f"{prefix}.b1"] += gh.sum(axis=(0, 1))
    return gh @ params[f"{prefix}.w1"].T


def _aggregate(m, axis, mean):
    out = m.sum(axis=axis, keepdims=True) - m
    if mean:
        out = out / max(m.shape[axis] - 1, 1)
    return out


@dataclass
class E2ETape:
    cfg: E2EConfig
    params: dict
    layers: list
    raw: np.ndarray  # pre-projection precoder
    p_max: float


def e2e_forward(features: np.ndarray, params: dict, cfg: E2EConfig, p_max: float):
    """Map ``(N_t, K, 2)`` edge features to a feasible precoder; returns ``(b, tape)``."""
    a = np.asarray(features, dtype=float)
    if a.ndim != 3 or a.shape[2] != 2:
        raise ValueError(f"expected (N_t, K, 2) edge features, got {a.shape}")
    mean = cfg.aggregator == "mean"
    layers = []
    for ell in range(cfg.n_layers):
        m1, c1 = _mlp(params, f"l{ell}.mlp1", a)
        m2, c2 = _mlp(params, f"l{ell}.mlp2", a)
        z = np.concatenate([a, _aggregate(m1, 0, mean), _aggregate(m2, 1, mean)], axis=-1)
        y, c3 = _mlp(params, f"l{ell}.mlp3", z)
        last = ell == cfg.n_layers - 1
        a = y if last else np.maximum(y, 0.0)
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite edge features after layer {ell}")
        layers.append((c1, c2, c3, y))
    raw = a[..., 0] + 1j * a[..., 1]
    tape = E2ETape(cfg=cfg, params=params, layers=layers, raw=raw, p_max=p_max)
    return project_power(raw, p_max), tape


def e2e_backward(tape: E2ETape, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given ``loss_grad = dL/dRe(b) + 1j dL/dIm(b)`` for the projected output."""
    g = np.asarray(loss_grad, dtype=np.complex128)
    if g.shape != tape.raw.shape:
        raise ValueError(f"gradient shape {g.shape} does not match output {tape.raw.shape}")
    params, cfg = tape.params, tape.cfg
    mean = cfg.aggregator == "mean"
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    g_raw = project_power_backward(tape.raw, tape.p_max, g)
    ga = np.stack([g_raw.real, g_raw.imag], axis=-1)
    for ell in range(cfg.n_layers - 1, -1, -1):
        c1, c2, c3, y = tape.layers[ell]
        gy = ga if ell == cfg.n_layers - 1 else ga * (y > 0)
        gz = _mlp_backward(params, f"l{ell}.mlp3", c3, gy, grads)
        d_in = c1[0].shape[-1]
        e = cfg.edge_dim
        g_self, g_ant, g_user = gz[..., :d_in], gz[..., d_in:d_in + e], gz[..., d_in + e:]
        # the leave-one-out sum is self-adjoint
        ga = g_self.copy()
        ga += _mlp_backward(params, f"l{ell}.mlp1", c1, _aggregate(g_ant, 0, mean), grads)
        ga += _mlp_backward(params, f"l{ell}.mlp2", c2, _aggregate(g_user, 1, mean), grads)
    return grads


def e2e_flops(n_t: int, k: int, cfg: E2EConfig) -> int:
    """Multiply-add count of one forward pass (2 flops per multiply-add).

    Every term is a per-edge cost times the edge count ``n_t * k``.
    """
    edges = n_t * k
    total = 0
    for _, fan_in, h, fan_out in _mlp_shapes(cfg):
        total += edges * (2 * fan_in * h + h + 2 * h * fan_out + fan_out)
    # leave-one-out sums: one add and one subtract per feature per edge
    total += cfg.n_layers * edges * 2 * 2 * cfg.edge_dim
    return total


def precode_e2e(cs: ChannelSet, params: dict, cfg: E2EConfig, p_max: float) -> np.ndarray:
    b, _ = e2e_forward(edge_features(cs), params, cfg, p_max)
    return b


def e2e_ee_and_grad(cs: ChannelSet, params: dict, cfg: E2EConfig, pm: PowerModel, bw: float, p_max: float):
    b, tape = e2e_forward(edge_features(cs), params, cfg, p_max)
    ee, g_b = energy_efficiency_grad(cs, b, pm, bw)
    return ee, e2e_backward(tape, g_b)
