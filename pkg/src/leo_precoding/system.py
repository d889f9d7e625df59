"""Rates, power consumption and energy efficiency of a precoder.

Rates are in bits/s/Hz (log base 2 throughout), powers in watts, energy
efficiency in bits/joule.  A precoder ``b`` is an ``(N_t, K)`` complex matrix
whose column k feeds user k.

Gradients returned by the ``*_grad`` helpers use the convention
``G = dL/dRe(b) + 1j * dL/dIm(b)`` for a real scalar ``L``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import ArrayGeometry, ChannelDistributionSpec, ChannelSet, draw_fast_fading

__all__ = [
    "PowerModel",
    "SystemConfig",
    "EEBreakdown",
    "sinr_upper",
    "rate_upper",
    "rate_ergodic_mc",
    "instantaneous_sinr",
    "total_power",
    "energy_efficiency",
    "energy_efficiency_grad",
    "project_power",
    "project_power_backward",
    "is_feasible",
    "config_hash",
]

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class PowerModel:
    """Transmitter consumption ``xi * sum ||b_k||^2 + p_t``.

    ``xi`` is the inverse amplifier efficiency (an efficiency of 0.5 gives
    ``xi = 2``) and ``p_t = n_t*p_rfc + p_lo + p_bb`` the static circuit power.
    """

    n_t: int
    xi: float = 2.0
    p_rfc: float = 0.3
    p_lo: float = 0.1
    p_bb: float = 0.2

    def __post_init__(self):
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if min(self.p_rfc, self.p_lo, self.p_bb) < 0:
            raise ValueError("static power terms must be non-negative")

    @property
    def p_t(self) -> float:
        return self.n_t * self.p_rfc + self.p_lo + self.p_bb


@dataclass(frozen=True)
class SystemConfig:
    """Everything that fixes one simulated system apart from the channel seed."""

    nx: int = 8
    ny: int = 8
    k: int = 10
    bandwidth: float = 20e6
    amplifier_efficiency: float = 0.5
    p_rfc: float = 0.3
    p_lo: float = 0.1
    p_bb: float = 0.2
    p_max: float = 10.0
    snr_db: float = 0.0
    carrier_hz: float = 2e9
    distribution: ChannelDistributionSpec = field(default_factory=ChannelDistributionSpec)

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.nx, self.ny)

    @property
    def n_t(self) -> int:
        return self.nx * self.ny

    @property
    def power_model(self) -> PowerModel:
        return PowerModel(
            n_t=self.n_t, xi=1.0 / self.amplifier_efficiency, p_rfc=self.p_rfc, p_lo=self.p_lo, p_bb=self.p_bb
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        if "distribution" in d and isinstance(d["distribution"], dict):
            dist = dict(d["distribution"])
            if "gamma_range" in dist:
                dist["gamma_range"] = tuple(dist["gamma_range"])
            d["distribution"] = ChannelDistributionSpec(**dist)
        return cls(**d)

    @classmethod
    def table1(cls) -> "SystemConfig":
        """Full-size parameter set: 8x8 array, 10 users, 20 MHz, 0 dB SNR."""
        return cls()

    @classmethod
    def desk(cls) -> "SystemConfig":
        """4x4 array with 4 users; small enough for CPU training."""
        return cls(nx=4, ny=4, k=4)


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable config (dataclasses are expanded)."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class EEBreakdown:
    """``sum_rate`` is in bits/s (bandwidth included); ``per_user_rate`` in bits/s/Hz."""

    sum_rate: float
    total_power: float
    ee: float
    per_user_rate: np.ndarray


def _gains(cs: ChannelSet, b: np.ndarray) -> np.ndarray:
    # z[k, l] = |v_k^H b_l|^2
    z = cs.v.conj().T @ b
    return z.real**2 + z.imag**2


def sinr_upper(cs: ChannelSet, b: np.ndarray, k: int | None = None):
    """Statistical-CSI SINR ``gamma_k|v_k^H b_k|^2 / (sum_{l!=k} gamma_k|v_k^H b_l|^2 + N0)``.

    Returns the value for user ``k``, or the whole per-user array when ``k`` is None.
    """
    g = _gains(cs, np.asarray(b))
    sig = np.diag(g)
    interf = g.sum(axis=1) - sig
    s = cs.gamma * sig / (cs.gamma * interf + cs.n0)
    return s if k is None else float(s[k])


def rate_upper(cs: ChannelSet, b: np.ndarray) -> np.ndarray:
    return np.log2(1.0 + sinr_upper(cs, b))


def instantaneous_sinr(h: np.ndarray, b: np.ndarray, n0: float) -> np.ndarray:
    """SINR of every user for instantaneous channels ``h`` of shape ``(..., N_t, K)``."""
    z = np.swapaxes(h.conj(), -1, -2) @ b
    g = z.real**2 + z.imag**2
    sig = np.diagonal(g, axis1=-2, axis2=-1)
    interf = g.sum(axis=-1) - sig
    return sig / (interf + n0)


def rate_ergodic_mc(
    cs: ChannelSet,
    b: np.ndarray,
    n_samples: int,
    seed: int,
    paths_per_user: int = 3,
    *,
    phases: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo ergodic rate per user and its standard error.

    Each sample draws fast fading with :func:`draw_fast_fading` and evaluates
    ``log2(1 + SINR_k)`` with the instantaneous SINR.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    draw = draw_fast_fading(cs, paths_per_user, seed, size=n_samples, phases=phases)
    r = np.log2(1.0 + instantaneous_sinr(draw.h, np.asarray(b), cs.n0))
    mean = r.mean(axis=0)
    if n_samples > 1:
        se = r.std(axis=0, ddof=1) / np.sqrt(n_samples)
    else:
        se = np.full_like(mean, np.inf)
    return mean, se


def total_power(pm: PowerModel, b: np.ndarray) -> float:
    b = np.asarray(b)
    return float(pm.xi * np.sum(b.real**2 + b.imag**2) + pm.p_t)


def energy_efficiency(cs: ChannelSet, b: np.ndarray, pm: PowerModel, bw: float) -> EEBreakdown:
    r = rate_upper(cs, b)
    p = total_power(pm, b)
    sum_rate = bw * float(np.sum(r))
    return EEBreakdown(sum_rate=sum_rate, total_power=p, ee=sum_rate / p, per_user_rate=r)


def energy_efficiency_grad(cs: ChannelSet, b: np.ndarray, pm: PowerModel, bw: float) -> tuple[float, np.ndarray]:
    """EE of ``b`` together with its gradient with respect to ``b``."""
    b = np.asarray(b, dtype=np.complex128)
    z = cs.v.conj().T @ b
    g = z.real**2 + z.imag**2
    sig = np.diag(g)
    tot = cs.gamma * g.sum(axis=1) + cs.n0  # gamma_k * sum_l |v_k^H b_l|^2 + N0
    den = tot - cs.gamma * sig  # interference plus noise
    rates = (np.log(tot) - np.log(den)) / LN2
    # d sum_rate / d |v_k^H b_l|^2, scaled by 2/ln2 for the gradient of |z|^2
    w = (cs.gamma / tot)[:, None] - (cs.gamma / den)[:, None] * (1.0 - np.eye(cs.k))
    grad_rate = cs.v @ (w * z) * (2.0 / LN2)
    p = float(pm.xi * np.sum(b.real**2 + b.imag**2) + pm.p_t)
    sr = float(np.sum(rates))
    ee = bw * sr / p
    grad = bw * (grad_rate / p - sr * 2.0 * pm.xi * b / p**2)
    return ee, grad


def is_feasible(b: np.ndarray, p_max: float, rtol: float = 1e-9) -> bool:
    b = np.asarray(b)
    return float(np.sum(b.real**2 + b.imag**2)) <= p_max * (1.0 + rtol)


def project_power(b: np.ndarray, p_max: float) -> np.ndarray:
    """Rescale ``b`` onto ``sum ||b_k||^2 <= p_max``; feasible inputs pass through unchanged."""
    if p_max <= 0:
        raise ValueError("p_max must be positive")
    b = np.asarray(b, dtype=np.complex128)
    power = float(np.sum(b.real**2 + b.imag**2))
    if power <= p_max:
        return b.copy()
    out = b * (np.sqrt(p_max) / np.sqrt(power))
    # rounding can leave the result a few ulps above the budget under either way of summing
    while max(np.sum(out.real**2 + out.imag**2), np.sum(np.abs(out) ** 2)) > p_max:
        out = out * (1.0 - 2.0**-52)
    return out


def project_power_backward(b: np.ndarray, p_max: float, grad_out: np.ndarray) -> np.ndarray:
    """Pull a gradient with respect to ``project_power(b)`` back to ``b``."""
    b = np.asarray(b, dtype=np.complex128)
    power = float(np.sum(b.real**2 + b.imag**2))
    if power <= p_max:
        return np.array(grad_out, dtype=np.complex128)
    n = np.sqrt(power)
    c = np.sqrt(p_max)
    inner = float(np.real(np.vdot(b, grad_out)))
    return c / n * grad_out - c * inner / n**3 * b
