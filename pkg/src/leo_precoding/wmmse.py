"""Energy-efficiency maximization by Dinkelbach iterations over WMMSE subproblems.

For a fixed ratio ``rho`` the subproblem maximizes

    F(rho) = sum_k R_k(b) - rho * P_total(b) / B_w

(normalized by the bandwidth so thresholds are in bits/s/Hz).  It is solved
by block coordinate descent on the weighted-MSE reformulation: receivers
``u``, weights ``w`` and precoder ``b`` are updated in turn until the sum of
log-weights settles.  Because the MSE identity produces natural-log rates
while the objective uses log2, the WMMSE weights carry ``B_w / ln 2``.

The b-update solves ``M b_k = (B_w/ln2) w_k sqrt(gamma_k) conj(u_k) v_k`` with

    M = sum_k (B_w/ln2) w_k |u_k|^2 gamma_k v_k v_k^H + (rho*xi + a) I,

where the power multiplier ``a`` is found by bisection.  The whole loop
accepts any b-update callable, which is how the unfolded network reuses it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import ChannelSet
from .complex_linalg import solve_hpd
from .system import LN2, PowerModel, rate_upper, total_power

__all__ = [
    "BisectionError",
    "DinkelbachState",
    "WmmseResult",
    "DinkelbachResult",
    "BUpdate",
    "effective_bandwidth",
    "update_u",
    "mse",
    "update_w",
    "wmmse_matrix",
    "wmmse_rhs",
    "update_b",
    "subproblem_objective",
    "initial_precoder",
    "wmmse_solve",
    "dinkelbach_solve",
    "dinkelbach_loop",
    "trace_to_jsonl",
]


class BisectionError(ArithmeticError):
    pass


def effective_bandwidth(bw: float) -> float:
    """Bandwidth weight used inside WMMSE so that its rates come out in log2 units."""
    return bw / LN2


def update_u(cs: ChannelSet, b: np.ndarray) -> np.ndarray:
    """MMSE receivers ``u_k = sqrt(g_k) conj(v_k^H b_k) / (sum_i g_k |v_k^H b_i|^2 + N0)``.

    The estimate is ``u_k y_k``, so the conjugate makes ``u_k`` the minimizer
    of :func:`mse` for any phase of the useful term.
    """
    z = cs.v.conj().T @ b
    a = cs.gamma * np.sum(z.real**2 + z.imag**2, axis=1) + cs.n0
    return np.sqrt(cs.gamma) * np.conj(np.diag(z)) / a


def mse(cs: ChannelSet, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    z = cs.v.conj().T @ b
    g = z.real**2 + z.imag**2
    own = np.abs(u * np.sqrt(cs.gamma) * np.diag(z) - 1.0) ** 2
    interf = cs.gamma * (g.sum(axis=1) - np.diag(g)) * np.abs(u) ** 2
    return own + interf + cs.n0 * np.abs(u) ** 2


def update_w(cs: ChannelSet, b: np.ndarray, u: np.ndarray) -> np.ndarray:
    return 1.0 / mse(cs, b, u)


def wmmse_matrix(
    cs: ChannelSet, u: np.ndarray, w: np.ndarray, rho: float, pm: PowerModel, bw: float, a: float = 0.0
) -> np.ndarray:
    c = effective_bandwidth(bw) * w * np.abs(u) ** 2 * cs.gamma
    m = (cs.v * c) @ cs.v.conj().T
    m[np.diag_indices_from(m)] += rho * pm.xi + a
    return m


def wmmse_rhs(cs: ChannelSet, u: np.ndarray, w: np.ndarray, bw: float) -> np.ndarray:
    """Columns ``(B_w/ln2) w_k sqrt(gamma_k) conj(u_k) v_k``."""
    return cs.v * (effective_bandwidth(bw) * w * np.sqrt(cs.gamma) * np.conj(u))


def _power(b: np.ndarray) -> float:
    return float(np.sum(b.real**2 + b.imag**2))


def update_b(
    cs: ChannelSet,
    u: np.ndarray,
    w: np.ndarray,
    rho: float,
    pm: PowerModel,
    bw: float,
    p_max: float,
    *,
    rtol: float = 1e-11,
    max_iter: int = 200,
    return_multiplier: bool = False,
):
    """Exact precoder update with the power multiplier chosen by bisection.

    Either ``a == 0`` and the unconstrained solution is feasible, or ``a > 0``
    and the total power equals ``p_max`` to within ``rtol`` (from below).
    """
    if rho < 0:
        raise ValueError("rho must be non-negative")
    g = wmmse_matrix(cs, u, w, 0.0, pm, bw)
    rhs = wmmse_rhs(cs, u, w, bw)
    ridge0 = rho * pm.xi
    eye = np.eye(cs.n_t)

    def solve(a):
        return solve_hpd(g + (ridge0 + a) * eye, rhs)

    if ridge0 > 0:
        b = solve(0.0)
        if _power(b) <= p_max:
            return (b, 0.0) if return_multiplier else b
    # ||M^{-1} x|| <= ||x|| / (ridge0 + a) bounds the power from above
    hi = max(math.sqrt(_power(rhs) / p_max) - ridge0, 0.0)
    if hi == 0.0:  # pragma: no cover - only when ridge0 alone already meets the bound
        hi = 1e-300
    floor = 1e-14 * (float(np.real(np.trace(g))) / cs.n_t + ridge0 + 1e-300)
    b_hi = solve(hi)
    lo = 0.0
    for _ in range(max_iter):
        if p_max - _power(b_hi) <= rtol * p_max or hi <= floor:
            return (b_hi, hi) if return_multiplier else b_hi
        mid = 0.5 * (lo + hi)
        b_mid = solve(mid)
        if _power(b_mid) > p_max:
            lo = mid
        else:
            hi, b_hi = mid, b_mid
    raise BisectionError(f"power multiplier bisection did not converge in {max_iter} iterations")


def subproblem_objective(cs: ChannelSet, b: np.ndarray, rho: float, pm: PowerModel, bw: float) -> float:
    """``F(rho)`` divided by the bandwidth: ``sum_k R_k - rho * P_total / B_w``."""
    return float(np.sum(rate_upper(cs, b)) - rho * total_power(pm, b) / bw)


def initial_precoder(cs: ChannelSet, p_max: float) -> np.ndarray:
    """Matched directions with ``||b_k||^2 = p_max / K``."""
    v = cs.v / np.linalg.norm(cs.v, axis=0, keepdims=True)
    return v * math.sqrt(p_max / cs.k)


# (cs, u, w, rho) -> precoder
BUpdate = Callable[[ChannelSet, np.ndarray, np.ndarray, float], np.ndarray]


@dataclass
class WmmseResult:
    b: np.ndarray
    trace: list[dict]
    converged: bool
    iterations: int
    # receivers, weights and rho that produced ``b``
    u: np.ndarray = None
    w: np.ndarray = None
    rho: float = 0.0


@dataclass(frozen=True)
class DinkelbachState:
    rho: float
    iteration: int
    f_value: float


@dataclass
class DinkelbachResult:
    b: np.ndarray
    trace: list[DinkelbachState]
    converged: bool
    inner: list[WmmseResult] = field(default_factory=list)

    @property
    def last_inner(self) -> WmmseResult:
        return self.inner[-1]


def _exact_update(pm, bw, p_max) -> BUpdate:
    def step(cs, u, w, rho):
        return update_b(cs, u, w, rho, pm, bw, p_max)

    return step


def wmmse_solve(
    cs: ChannelSet,
    rho: float,
    init_b: np.ndarray,
    pm: PowerModel,
    bw: float,
    p_max: float,
    eps2: float = 1e-5,
    max_iter: int = 500,
    b_update: BUpdate | None = None,
) -> WmmseResult:
    """Block coordinate descent on the WMMSE form of ``F(rho)``.

    Each sweep computes ``u`` and ``w`` at the current precoder and then the
    new precoder; the loop stops once ``|sum log w - sum log w'|`` between
    consecutive sweeps drops below ``eps2``.  The trace records the
    subproblem objective of every iterate, starting with ``init_b``.
    """
    b_update = b_update or _exact_update(pm, bw, p_max)
    weff = effective_bandwidth(bw)
    b = np.asarray(init_b, dtype=np.complex128)
    u = update_u(cs, b)
    w = update_w(cs, b, u)
    trace = [{
        "iteration": 0,
        "objective": subproblem_objective(cs, b, rho, pm, bw),
        "sum_log_w": float(np.sum(np.log(w))),
        "surrogate": float(np.sum(w * mse(cs, b, u) - np.log(w))) + rho * total_power(pm, b) / weff,
        "power": _power(b),
    }]
    best = WmmseResult(b, trace, False, 0, u, w, rho)
    best_obj = -np.inf
    for it in range(1, max_iter + 1):
        b_new = b_update(cs, u, w, rho)
        u_new = update_u(cs, b_new)
        w_new = update_w(cs, b_new, u_new)
        obj = subproblem_objective(cs, b_new, rho, pm, bw)
        slw = float(np.sum(np.log(w_new)))
        surrogate = float(np.sum(w_new * mse(cs, b_new, u_new) - np.log(w_new))) + rho * total_power(pm, b_new) / weff
        trace.append({"iteration": it, "objective": obj, "sum_log_w": slw, "surrogate": surrogate,
                      "power": _power(b_new)})
        current = WmmseResult(b_new, trace, False, it, u, w, rho)
        if obj >= best_obj:
            best_obj, best = obj, current
        delta = abs(slw - float(np.sum(np.log(w))))
        b, u, w = b_new, u_new, w_new
        if delta < eps2:
            current.converged = True
            return current
    best.iterations = max_iter
    return best


def dinkelbach_loop(
    cs: ChannelSet,
    pm: PowerModel,
    bw: float,
    p_max: float,
    b_update: BUpdate,
    eps1: float = 1e-5,
    eps2: float = 1e-5,
    max_outer: int = 100,
    max_inner: int = 500,
    init_b: np.ndarray | None = None,
) -> DinkelbachResult:
    """Outer Dinkelbach iteration driven by an arbitrary b-update."""
    if eps1 <= 0 or eps2 <= 0:
        raise ValueError("thresholds must be positive")
    b = initial_precoder(cs, p_max) if init_b is None else np.asarray(init_b, dtype=np.complex128)
    rho = 0.0
    trace: list[DinkelbachState] = []
    inner: list[WmmseResult] = []
    converged = False
    for n in range(max_outer):
        res = wmmse_solve(cs, rho, b, pm, bw, p_max, eps2=eps2, max_iter=max_inner, b_update=b_update)
        inner.append(res)
        b = res.b
        f_val = subproblem_objective(cs, b, rho, pm, bw)
        trace.append(DinkelbachState(rho=rho, iteration=n, f_value=f_val))
        if f_val <= eps1:
            converged = True
            break
        rho = bw * float(np.sum(rate_upper(cs, b))) / total_power(pm, b)
    return DinkelbachResult(b=b, trace=trace, converged=converged, inner=inner)


def dinkelbach_solve(
    cs: ChannelSet,
    pm: PowerModel,
    bw: float,
    p_max: float,
    eps1: float = 1e-5,
    eps2: float = 1e-5,
    max_outer: int = 100,
    max_inner: int = 500,
) -> DinkelbachResult:
    """EE-optimal precoder with exact (Cholesky) b-updates.

    The first subproblem starts from :func:`initial_precoder`; later ones
    warm-start from the previous subproblem's precoder, so ``F(rho_n) >= 0``
    and the ratio sequence never decreases.
    """
    return dinkelbach_loop(cs, pm, bw, p_max, _exact_update(pm, bw, p_max), eps1, eps2, max_outer, max_inner)


def trace_to_jsonl(result: DinkelbachResult, path) -> None:
    """One JSON line per inner iterate, tagged with its outer index and rho."""
    with open(path, "w") as fh:
        for n, (state, res) in enumerate(zip(result.trace, result.inner)):
            for row in res.trace:
                fh.write(json.dumps({"outer": n, "rho": state.rho, **row}) + "\n")
