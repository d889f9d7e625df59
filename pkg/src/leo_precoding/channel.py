"""Statistical-CSI channel draws for a UPA-equipped LEO satellite.

Every user sees the satellite along a single direction, so its channel is
``h_k = g_k * v_k`` with a unit-norm array response ``v_k`` and a scalar
fast-fading gain ``g_k`` whose mean power is ``gamma_k``.  Delay and Doppler
phase terms are unit-modulus and do not change any SINR, so they are set to 1.

Seeding
-------
All generators are pure functions of their inputs and an integer seed.  Child
seeds are derived with :func:`child_seed`, which hashes ``(seed, *keys)``
through :class:`numpy.random.SeedSequence`; parallel workers therefore produce
identical draws regardless of scheduling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "ArrayGeometry",
    "ChannelDistributionSpec",
    "UserChannelStat",
    "ChannelSet",
    "FastFadingDraw",
    "child_seed",
    "make_rng",
    "steering_vector",
    "noise_power_from_snr",
    "draw_channel_set",
    "draw_fast_fading",
    "perturb_csi",
    "NO_ERROR",
    "save_channel_sets",
    "load_channel_sets",
    "DATASET_MAGIC",
]

DATASET_MAGIC = "LEOCH1"
NO_ERROR = float("-inf")


def child_seed(seed: int, *keys: int) -> int:
    """Derive a 63-bit child seed from ``seed`` and any number of integer keys."""
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


@dataclass(frozen=True)
class ArrayGeometry:
    nx: int
    ny: int
    spacing: float = 0.5  # in wavelengths

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("array needs at least one element along each axis")

    @property
    def n_t(self) -> int:
        return self.nx * self.ny


@dataclass(frozen=True)
class ChannelDistributionSpec:
    """Priors for the per-user statistical CSI.

    ``gamma`` is ``"ones"`` (every user has unit mean gain) or ``"uniform"``
    (i.i.d. uniform on ``gamma_range``).
    """

    angle_low: float = -math.pi / 3
    angle_high: float = math.pi / 3
    gamma: str = "ones"
    gamma_range: tuple[float, float] = (0.5, 1.5)
    paths_per_user: int = 3

    def __post_init__(self):
        if self.gamma not in ("ones", "uniform"):
            raise ValueError(f"unknown gamma prior {self.gamma!r}")
        if not (-math.pi / 2 <= self.angle_low <= self.angle_high <= math.pi / 2):
            raise ValueError("angle range must lie within [-pi/2, pi/2]")


@dataclass(frozen=True)
class UserChannelStat:
    v: np.ndarray
    gamma: float
    angles: tuple[float, float]


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """One draw of the system's statistical CSI.

    Stored column-wise: ``v[:, k]`` is user k's direction vector, ``gamma[k]``
    its mean channel gain power and ``angles[k]`` its ``(theta_x, theta_y)``.
    """

    v: np.ndarray
    gamma: np.ndarray
    n0: float
    seed: int
    geometry: ArrayGeometry
    angles: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.v.ndim != 2 or self.v.shape[1] != self.gamma.shape[0]:
            raise ValueError("v must be (N_t, K) and gamma (K,)")
        if self.n0 <= 0:
            raise ValueError("noise power must be positive")
        if np.any(self.gamma < 0):
            raise ValueError("gamma must be non-negative")

    @property
    def n_t(self) -> int:
        return self.v.shape[0]

    @property
    def k(self) -> int:
        return self.v.shape[1]

    @property
    def users(self) -> list[UserChannelStat]:
        angles = self.angles if self.angles is not None else np.full((self.k, 2), np.nan)
        return [
            UserChannelStat(self.v[:, i].copy(), float(self.gamma[i]), (float(angles[i, 0]), float(angles[i, 1])))
            for i in range(self.k)
        ]

    def effective_channel(self) -> np.ndarray:
        """``sqrt(gamma_k) v_k`` stacked as columns, the quantity the rate bound consumes."""
        return self.v * np.sqrt(self.gamma)[None, :]

    def permute_antennas(self, perm) -> "ChannelSet":
        return replace(self, v=self.v[np.asarray(perm), :])

    def permute_users(self, perm) -> "ChannelSet":
        perm = np.asarray(perm)
        angles = None if self.angles is None else self.angles[perm]
        return replace(self, v=self.v[:, perm], gamma=self.gamma[perm], angles=angles)

    def same_as(self, other: "ChannelSet") -> bool:
        return (
            np.array_equal(self.v, other.v)
            and np.array_equal(self.gamma, other.gamma)
            and self.n0 == other.n0
            and self.seed == other.seed
            and self.geometry == other.geometry
        )


@dataclass(frozen=True)
class FastFadingDraw:
    """Instantaneous gains ``g`` of shape ``(..., K)`` and channels ``h`` of shape ``(..., N_t, K)``."""

    g: np.ndarray
    h: np.ndarray


def steering_vector(geom: ArrayGeometry, theta_x: float, theta_y: float) -> np.ndarray:
    """Unit-norm UPA response, the Kronecker product of two ULA responses.

    Element ``(p, q)`` sits at flat index ``p * ny + q`` and has phase
    ``2*pi*spacing*(p*sin(theta_x) + q*sin(theta_y))``.
    """
    p = np.arange(geom.nx)
    q = np.arange(geom.ny)
    ax = np.exp(2j * np.pi * geom.spacing * p * np.sin(theta_x))
    ay = np.exp(2j * np.pi * geom.spacing * q * np.sin(theta_y))
    return np.kron(ax, ay) / np.sqrt(geom.n_t)


def noise_power_from_snr(p_max: float, gamma_mean: float, k: int, snr_db: float) -> float:
    """Noise power giving a per-user transmit SNR of ``p_max * gamma_mean / (k * n0)``."""
    return p_max * gamma_mean / (k * 10.0 ** (snr_db / 10.0))


def draw_channel_set(
    geom: ArrayGeometry,
    k: int,
    rng_seed: int,
    dist: ChannelDistributionSpec | None = None,
    *,
    snr_db: float = 0.0,
    p_max: float = 10.0,
    n0: float | None = None,
) -> ChannelSet:
    """Draw K users' directions and gains; ``n0`` defaults to the SNR convention."""
    if k < 1:
        raise ValueError("need at least one user")
    dist = dist or ChannelDistributionSpec()
    rng = make_rng(rng_seed)
    angles = rng.uniform(dist.angle_low, dist.angle_high, size=(k, 2))
    if dist.gamma == "ones":
        gamma = np.ones(k)
    else:
        gamma = rng.uniform(*dist.gamma_range, size=k)
    v = np.stack([steering_vector(geom, tx, ty) for tx, ty in angles], axis=1)
    if n0 is None:
        n0 = noise_power_from_snr(p_max, float(np.mean(gamma)), k, snr_db)
    return ChannelSet(v=v, gamma=gamma, n0=float(n0), seed=int(rng_seed), geometry=geom, angles=angles)


def draw_fast_fading(
    cs: ChannelSet,
    paths_per_user: int,
    rng_seed: int,
    size: int | None = None,
    *,
    phases: np.ndarray | None = None,
) -> FastFadingDraw:
    """Sum ``paths_per_user`` equal-power paths with i.i.d. uniform phases.

    Each path carries amplitude ``sqrt(gamma_k / L)`` so ``E|g_k|^2 = gamma_k``.
    ``phases`` (shape ``(K, L)``) pins the path phases, giving a deterministic
    draw.  With ``size`` set, a leading sample axis is added.
    """
    if paths_per_user < 1:
        raise ValueError("need at least one path per user")
    amp = np.sqrt(cs.gamma / paths_per_user)
    if phases is not None:
        ph = np.broadcast_to(np.asarray(phases, dtype=float), (cs.k, paths_per_user))
        g = (amp[:, None] * np.exp(1j * ph)).sum(axis=1)
        if size is not None:
            g = np.broadcast_to(g, (size, cs.k)).copy()
    else:
        rng = make_rng(rng_seed)
        shape = (cs.k, paths_per_user) if size is None else (size, cs.k, paths_per_user)
        ph = rng.uniform(0.0, 2 * np.pi, size=shape)
        g = (amp[..., :, None] * np.exp(1j * ph)).sum(axis=-1)
    h = g[..., None, :] * cs.v
    return FastFadingDraw(g=g, h=h)


def perturb_csi(cs: ChannelSet, error_db: float, rng_seed: int) -> ChannelSet:
    """Add circularly-symmetric Gaussian error of relative power ``10**(error_db/10)`` to each ``v_k``.

    ``error_db = NO_ERROR`` (``-inf``) returns an unchanged copy.
    """
    if error_db == NO_ERROR:
        return replace(cs, v=cs.v.copy())
    rng = make_rng(rng_seed)
    var = 10.0 ** (error_db / 10.0) / cs.n_t
    e = np.sqrt(var / 2) * (rng.standard_normal(cs.v.shape) + 1j * rng.standard_normal(cs.v.shape))
    v = cs.v + e
    v /= np.linalg.norm(v, axis=0, keepdims=True)
    return replace(cs, v=v)


def _cs_to_json(cs: ChannelSet) -> dict:
    return {
        "seed": cs.seed,
        "n0": cs.n0,
        "gamma": cs.gamma.tolist(),
        "angles": None if cs.angles is None else cs.angles.tolist(),
        "v_re": cs.v.real.tolist(),
        "v_im": cs.v.imag.tolist(),
    }


def save_channel_sets(
    path, sets: list[ChannelSet], dist: ChannelDistributionSpec | None = None, base_seed: int | None = None
) -> None:
    """Write a dataset as one JSON document headed by the ``LEOCH1`` magic."""
    if not sets:
        raise ValueError("refusing to write an empty dataset")
    geom = sets[0].geometry
    doc = {
        "magic": DATASET_MAGIC,
        "geometry": asdict(geom),
        "k": sets[0].k,
        "distribution": None if dist is None else asdict(dist),
        "base_seed": base_seed,
        "draws": [_cs_to_json(cs) for cs in sets],
    }
    Path(path).write_text(json.dumps(doc))


def load_channel_sets(path) -> tuple[list[ChannelSet], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("magic") != DATASET_MAGIC:
        raise ValueError(f"{path}: not a {DATASET_MAGIC} channel dataset")
    geom = ArrayGeometry(**doc["geometry"])
    sets = []
    for d in doc["draws"]:
        v = np.asarray(d["v_re"]) + 1j * np.asarray(d["v_im"])
        angles = None if d["angles"] is None else np.asarray(d["angles"])
        sets.append(ChannelSet(v=v, gamma=np.asarray(d["gamma"], dtype=float), n0=d["n0"], seed=d["seed"],
                               geometry=geom, angles=angles))
    header = {k: doc[k] for k in ("geometry", "k", "distribution", "base_seed")}
    return sets, header
