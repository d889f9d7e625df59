"""Taylor-expansion unfolded edge network approximating ``M^{-1}``.

The antennas form a complete graph whose edge ``(i, j)`` carries the complex
state ``f[i, j]``.  Starting from the inverted diagonal of ``M``, each layer
applies the edge update

    f'[a, b] = act( c0 f[a,b] + (c1 + s1) P[a,b] - s1 t[b,b] f[a,b]
                    + (s0 + s1 t[b,b]) sum_i f[i,b]
                    + d0 sum_j f[a,j] + d1 sum_j P[a,j] )

with ``t = M f`` and ``P = f t = f M f``.  This is the expansion of
``c.g[a,b] + s.sum_i g[i,b] + d.sum_j g[a,j]`` over the two-feature edge
vector ``g = [f, f t]``, with the double sum over non-adjacent edges
dropped.  Six real scalars per layer are trainable; ``c = [2, -1]`` and all
other parameters zero reproduces the Newton-Schulz step ``2f - f M f``.

The reverse pass is written out by hand.  Gradients of a real loss with
respect to complex arrays use ``G = dL/dRe + 1j dL/dIm``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet
from .system import PowerModel, project_power, project_power_backward, energy_efficiency_grad
from .wmmse import (
    DinkelbachResult,
    dinkelbach_loop,
    effective_bandwidth,
    wmmse_rhs,
)

__all__ = [
    "PARAM_NAMES",
    "ACTIVATIONS",
    "UnfoldingError",
    "UnfoldedParams",
    "LayerCache",
    "UnfoldTape",
    "LowRankPlusRidge",
    "diag_inverse_init",
    "init_scale",
    "taylor_step_exact",
    "unfold_forward",
    "replay",
    "unfold_backward",
    "unfolded_ridge",
    "unfolded_matrix",
    "unfolded_b_update",
    "precode_unfolded",
    "unfolded_ee_and_grad",
]

PARAM_NAMES = ("c0", "c1", "s0", "s1", "d0", "d1")
ACTIVATIONS = ("leaky_relu", "identity")
LEAK = 0.01


class UnfoldingError(ArithmeticError):
    pass


@dataclass
class UnfoldedParams:
    """Per-layer scalars, one row ``(c0, c1, s0, s1, d0, d1)`` per layer."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 6 or self.values.shape[0] < 1:
            raise ValueError("expected an (L, 6) parameter array with L >= 1")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameters must be finite")

    @property
    def n_layers(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, n_layers: int) -> "UnfoldedParams":
        return cls(np.zeros((n_layers, 6)))

    @classmethod
    def exact_taylor(cls, n_layers: int) -> "UnfoldedParams":
        v = np.zeros((n_layers, 6))
        v[:, 0] = 2.0
        v[:, 1] = -1.0
        return cls(v)

    def copy(self) -> "UnfoldedParams":
        return UnfoldedParams(self.values.copy())


def diag_inverse_init(m: np.ndarray) -> np.ndarray:
    """Diagonal matrix of reciprocals of ``m``'s diagonal."""
    d = np.diag(np.asarray(m))
    small = np.nonzero(np.abs(d) < 1e-300)[0]
    if small.size:
        raise UnfoldingError(f"diagonal entry {small[0]} is too close to zero to invert")
    return np.diag(1.0 / d).astype(np.complex128)


def init_scale(m: np.ndarray) -> float:
    """Step size keeping the Jacobi-started iteration contractive for HPD ``m``.

    Gershgorin bounds the (real, positive) spectrum of ``D^{-1} m`` by
    ``ub``; scaling the start by ``2 / (1 + ub)`` maps it into ``(0, 2)``.
    """
    m = np.asarray(m)
    d = np.abs(np.diag(m))
    ub = float(np.max(np.sum(np.abs(m), axis=1) / d))
    return 2.0 / (1.0 + ub) if ub > 1.0 else 1.0


def taylor_step_exact(f_prev: np.ndarray, p: np.ndarray) -> np.ndarray:
    """One first-order Taylor (Newton-Schulz) refinement ``2 f - f p f``."""
    f_prev = np.asarray(f_prev)
    if f_prev.shape != np.shape(p):
        raise ValueError("shape mismatch")
    return 2.0 * f_prev - f_prev @ p @ f_prev


def _act(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return x
    re, im = x.real, x.imag
    return np.where(re > 0, re, LEAK * re) + 1j * np.where(im > 0, im, LEAK * im)


def _act_backward(pre: np.ndarray, g: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return g
    return g.real * np.where(pre.real > 0, 1.0, LEAK) + 1j * g.imag * np.where(pre.imag > 0, 1.0, LEAK)


@dataclass
class LayerCache:
    f: np.ndarray  # layer input
    t: np.ndarray  # M f
    p: np.ndarray  # f M f
    pre: np.ndarray  # pre-activation


@dataclass
class UnfoldTape:
    m: np.ndarray
    op: object  # what the layers multiply by: ``m`` itself or its factored form
    params: UnfoldedParams
    activation: str
    init: str
    f0: np.ndarray
    layers: list[LayerCache] = field(default_factory=list)
    output: np.ndarray = None


class LowRankPlusRidge:
    """``M = V diag(c) V^H + beta I`` kept in factored form so that ``M x`` costs ``O(N K)`` per column."""

    def __init__(self, v: np.ndarray, c: np.ndarray, beta: float):
        self.v = np.asarray(v, dtype=np.complex128)
        self.c = np.asarray(c, dtype=float)
        self.beta = float(beta)

    def dense(self) -> np.ndarray:
        m = (self.v * self.c) @ self.v.conj().T
        m[np.diag_indices_from(m)] += self.beta
        return m

    def matmul(self, x: np.ndarray) -> np.ndarray:
        return self.v @ (self.c[:, None] * (self.v.conj().T @ x)) + self.beta * x


def _apply(m, x):
    return m.matmul(x) if isinstance(m, LowRankPlusRidge) else m @ x


def _layer(m, f, theta, activation):
    c0, c1, s0, s1, d0, d1 = theta
    t = _apply(m, f)
    p = f @ t
    td = np.diag(t)
    pre = (
        c0 * f
        + (c1 + s1) * p
        - s1 * f * td[None, :]
        + ((s0 + s1 * td) * f.sum(axis=0))[None, :]
        + d0 * f.sum(axis=1)[:, None]
        + d1 * p.sum(axis=1)[:, None]
    )
    return _act(pre, activation), LayerCache(f, t, p, pre)


def unfold_forward(
    m, params: UnfoldedParams, activation: str = "identity", init: str = "diag"
) -> tuple[np.ndarray, UnfoldTape]:
    """Run all layers on ``m`` and return the approximate inverse with its tape.

    ``m`` is a dense Hermitian matrix or a :class:`LowRankPlusRidge`; the
    latter gives the same layers with cheaper products by ``M``.
    ``init="diag"`` starts from :func:`diag_inverse_init`; ``init="scaled"``
    multiplies that start by :func:`init_scale` so that ill-conditioned
    matrices still contract.
    """
    op = m
    m = op.dense() if isinstance(op, LowRankPlusRidge) else np.asarray(m, dtype=np.complex128)
    if not isinstance(op, LowRankPlusRidge):
        op = m
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got {m.shape}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    f = diag_inverse_init(m)
    if init == "scaled":
        f = f * init_scale(m)
    elif init != "diag":
        raise ValueError(f"unknown init {init!r}")
    tape = UnfoldTape(m=m, op=op, params=params.copy(), activation=activation, init=init, f0=f)
    for ell, theta in enumerate(params.values):
        # divergence is reported below, not as a floating-point warning
        with np.errstate(over="ignore", invalid="ignore"):
            f, cache = _layer(op, f, theta, activation)
        if not np.all(np.isfinite(f)):
            raise UnfoldingError(f"non-finite edge states after layer {ell}")
        tape.layers.append(cache)
    tape.output = f
    return f, tape


def replay(tape: UnfoldTape) -> np.ndarray:
    """Recompute the forward output from the inputs recorded on ``tape``."""
    f = tape.f0
    for theta in tape.params.values:
        f, _ = _layer(tape.op, f, theta, tape.activation)
    return f


def unfold_backward(tape: UnfoldTape, output_grad: np.ndarray) -> np.ndarray:
    """Gradient of a real loss with respect to all ``(L, 6)`` parameters.

    ``output_grad`` is the loss gradient with respect to the forward output.
    """
    g = np.asarray(output_grad, dtype=np.complex128)
    if tape.output is None or g.shape != tape.output.shape or len(tape.layers) != tape.params.n_layers:
        raise ValueError("tape does not match the gradient or was not produced by unfold_forward")
    # M is Hermitian, so its adjoint is itself
    grads = np.zeros_like(tape.params.values)
    for ell in range(tape.params.n_layers - 1, -1, -1):
        c0, c1, s0, s1, d0, d1 = tape.params.values[ell]
        cache = tape.layers[ell]
        f, t, p = cache.f, cache.t, cache.p
        gp_ = _act_backward(cache.pre, g, tape.activation)
        td = np.diag(t)
        col_f = f.sum(axis=0)
        row_f = f.sum(axis=1)
        row_p = p.sum(axis=1)
        col_g = gp_.sum(axis=0)
        row_g = gp_.sum(axis=1)

        def inner(a, b):
            return float(np.real(np.vdot(a, b)))

        grads[ell] = (
            inner(gp_, f),
            inner(gp_, p),
            inner(col_g, col_f),
            inner(gp_, p - f * td[None, :]) + inner(col_g, td * col_f),
            inner(row_g, row_f),
            inner(row_g, row_p),
        )

        g_p = (c1 + s1) * gp_ + d1 * row_g[:, None]
        g_td = -s1 * np.sum(f.conj() * gp_, axis=0) + s1 * col_f.conj() * col_g
        g_col = (s0 + s1 * td.conj()) * col_g
        g_f = c0 * gp_ - s1 * gp_ * td.conj()[None, :] + g_col[None, :] + (d0 * row_g)[:, None]
        g_f += g_p @ t.conj().T
        g_t = f.conj().T @ g_p
        g_t[np.diag_indices_from(g_t)] += g_td
        g_f += _apply(tape.op, g_t)
        g = g_f
    return grads


def unfolded_ridge(cs: ChannelSet, u: np.ndarray, w: np.ndarray, rho: float, pm: PowerModel, bw: float,
                   p_max: float) -> float:
    """Closed-form ridge ``max(rho*xi, sum_k (B_w/ln2) w_k |u_k|^2 N0 / p_max)``.

    At a WMMSE fixed point with the power budget active the exact multiplier
    satisfies ``(rho*xi + a) * p_max = sum_k (B_w/ln2) w_k |u_k|^2 N0``, so
    this replaces the bisection with one O(K) evaluation.
    """
    est = effective_bandwidth(bw) * float(np.sum(w * np.abs(u) ** 2)) * cs.n0 / p_max
    return max(rho * pm.xi, est)


def unfolded_matrix(cs, u, w, rho, pm, bw, p_max) -> LowRankPlusRidge:
    """The b-update matrix with the closed-form ridge, in factored form."""
    c = effective_bandwidth(bw) * w * np.abs(u) ** 2 * cs.gamma
    return LowRankPlusRidge(cs.v, c, unfolded_ridge(cs, u, w, rho, pm, bw, p_max))


def unfolded_b_update(params: UnfoldedParams, pm: PowerModel, bw: float, p_max: float,
                      activation: str = "identity", init: str = "scaled"):
    def step(cs, u, w, rho):
        m = unfolded_matrix(cs, u, w, rho, pm, bw, p_max)
        f, _ = unfold_forward(m, params, activation, init)
        return project_power(f @ wmmse_rhs(cs, u, w, bw), p_max)

    return step


def precode_unfolded(
    cs: ChannelSet,
    pm: PowerModel,
    bw: float,
    p_max: float,
    params: UnfoldedParams,
    eps1: float = 1e-5,
    eps2: float = 1e-5,
    *,
    activation: str = "identity",
    init: str = "scaled",
    max_outer: int = 100,
    max_inner: int = 500,
    return_result: bool = False,
):
    """Dinkelbach/WMMSE precoding with the matrix inverse replaced by the unfolded network."""
    res = dinkelbach_loop(
        cs, pm, bw, p_max, unfolded_b_update(params, pm, bw, p_max, activation, init),
        eps1, eps2, max_outer, max_inner,
    )
    return res if return_result else res.b


def unfolded_ee_and_grad(
    cs: ChannelSet,
    result: DinkelbachResult,
    params: UnfoldedParams,
    pm: PowerModel,
    bw: float,
    p_max: float,
    activation: str = "identity",
    init: str = "scaled",
) -> tuple[float, np.ndarray]:
    """EE of the returned precoder and its gradient through the final b-update only.

    Receivers, weights and ``rho`` of that update are held fixed.
    """
    last = result.last_inner
    m = unfolded_matrix(cs, last.u, last.w, last.rho, pm, bw, p_max)
    f, tape = unfold_forward(m, params, activation, init)
    rhs = wmmse_rhs(cs, last.u, last.w, bw)
    raw = f @ rhs
    b = project_power(raw, p_max)
    ee, g_b = energy_efficiency_grad(cs, b, pm, bw)
    g_raw = project_power_backward(raw, p_max, g_b)
    return ee, unfold_backward(tape, g_raw @ rhs.conj().T)
