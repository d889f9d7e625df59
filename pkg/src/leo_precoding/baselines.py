"""Instantaneous-CSI reference precoders: matched filter, RZF and MMSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, draw_fast_fading
from .complex_linalg import solve_hpd
from .system import PowerModel, energy_efficiency, instantaneous_sinr, total_power

__all__ = ["BaselineSpec", "precode_baseline", "baseline_ee", "BASELINE_KINDS"]

BASELINE_KINDS = ("mf", "rzf", "mmse")


@dataclass(frozen=True)
class BaselineSpec:
    """``regularization`` is the RZF ridge; MMSE derives its own from the noise power."""

    kind: str
    regularization: float | None = None
    power_split: str = "equal"

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}")
        if self.kind == "rzf" and not (self.regularization and self.regularization > 0):
            raise ValueError("RZF needs a positive regularization")
        if self.power_split != "equal":
            raise ValueError("only equal power scaling is supported")


def precode_baseline(h: np.ndarray, spec: BaselineSpec, p_max: float, n0: float | None = None) -> np.ndarray:
    """Linear precoder for the ``(N_t, K)`` channel ``h`` at exactly ``p_max`` total power.

    MF uses ``B = H``; RZF and MMSE use ``B = H (H^H H + alpha I)^{-1}`` with
    ``alpha = K * n0 / p_max`` for MMSE.  A single common factor then brings
    the total power to ``p_max``.
    """
    h = np.asarray(h, dtype=np.complex128)
    if p_max <= 0:
        raise ValueError("p_max must be positive")
    if not np.all(np.isfinite(h)):
        raise ValueError("channel has non-finite entries")
    k = h.shape[1]
    if spec.kind == "mf":
        b = h.copy()
    else:
        if spec.kind == "mmse":
            if n0 is None:
                raise ValueError("MMSE precoding needs the noise power")
            alpha = k * n0 / p_max
        else:
            alpha = spec.regularization
        gram = h.conj().T @ h + alpha * np.eye(k)
        b = solve_hpd(gram, h.conj().T).conj().T
    return b * np.sqrt(p_max / np.sum(np.abs(b) ** 2))


def baseline_ee(
    cs: ChannelSet,
    spec: BaselineSpec,
    pm: PowerModel,
    bw: float,
    p_max: float,
    n_draws: int = 50,
    seed: int = 0,
    paths_per_user: int = 3,
) -> dict:
    """Average EE of a baseline over fast-fading draws.

    Returns the Monte-Carlo figure (precoder and SINR both from the same
    instantaneous channel) under ``"ee"`` and the statistical-bound figure of
    the same precoders under ``"ee_bound"``.
    """
    draws = draw_fast_fading(cs, paths_per_user, seed, size=n_draws)
    ees, bounds, rates = [], [], []
    for h in draws.h:
        b = precode_baseline(h, spec, p_max, cs.n0)
        r = np.log2(1.0 + instantaneous_sinr(h, b, cs.n0))
        p = total_power(pm, b)
        ees.append(bw * r.sum() / p)
        rates.append(bw * r.sum())
        bounds.append(energy_efficiency(cs, b, pm, bw).ee)
    return {
        "ee": float(np.mean(ees)),
        "ee_bound": float(np.mean(bounds)),
        "sum_rate": float(np.mean(rates)),
        "power": float(total_power(pm, b)),
    }
