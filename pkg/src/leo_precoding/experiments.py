"""Experiment grid, timing benchmark and CSI-robustness sweep.

Every run is identified by ``(experiment, config_hash, method, seed, sweep
variable, sweep value)``; runs already present in a record list are
skipped, which makes sweeps resumable.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import BaselineSpec, baseline_ee, precode_baseline
from .channel import NO_ERROR, child_seed, draw_channel_set, draw_fast_fading, perturb_csi
from .records import ResultRecord
from .system import SystemConfig, config_hash, energy_efficiency, is_feasible
from .unfolded import UnfoldedParams, unfolded_b_update
from .wmmse import _exact_update, dinkelbach_loop, dinkelbach_solve

__all__ = [
    "METHODS",
    "LEARNED",
    "SWEEP_VARS",
    "ConfigurationError",
    "ExperimentSpec",
    "TimingResult",
    "array_shape",
    "apply_sweep",
    "run_experiment",
    "timing_benchmark",
    "robustness_sweep",
    "degradation",
    "bootstrap_mean_ci",
]

METHODS = ("wmmse", "unfolded", "e2e", "rzf", "mmse", "mf")
LEARNED = ("unfolded", "e2e")
SWEEP_VARS = ("p_max", "n_t", "k", "snr_db", "error_db")

# experiment seeds live in their own namespace, apart from training data
EXPERIMENT_NAMESPACE = 7
CSI_ERROR_NAMESPACE = 8


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    experiment_id: str
    methods: tuple[str, ...]
    sweep_var: str
    grid: tuple[float, ...]
    system: SystemConfig = field(default_factory=SystemConfig.desk)
    seeds: tuple[int, ...] = tuple(range(10))
    repetitions: int = 1
    checkpoints: dict = field(default_factory=dict)
    baseline_draws: int = 50
    rzf_regularization: float = 1.0

    def __post_init__(self):
        if not self.methods:
            raise ConfigurationError("no methods given")
        if not self.grid:
            raise ConfigurationError("empty sweep grid")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigurationError(f"unknown methods: {', '.join(bad)}")
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigurationError(f"unknown sweep variable {self.sweep_var!r}")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if "system" in d:
            d["system"] = d["system"] if isinstance(d["system"], SystemConfig) else SystemConfig.from_dict(d["system"])
        for key in ("methods", "grid", "seeds"):
            if key in d:
                v = d[key]
                d[key] = tuple(range(v)) if key == "seeds" and isinstance(v, int) else tuple(v)
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = self.system.to_dict()
        return d


def array_shape(n_t: int) -> tuple[int, int]:
    """Most square ``(nx, ny)`` factorization with ``nx <= ny``."""
    n_t = int(n_t)
    if n_t < 1:
        raise ConfigurationError("need at least one antenna")
    nx = max(d for d in range(1, math.isqrt(n_t) + 1) if n_t % d == 0)
    return nx, n_t // nx


def apply_sweep(sys_cfg: SystemConfig, var: str, value: float) -> SystemConfig:
    if var == "p_max":
        return replace(sys_cfg, p_max=float(value))
    if var == "snr_db":
        return replace(sys_cfg, snr_db=float(value))
    if var == "k":
        return replace(sys_cfg, k=int(value))
    if var == "n_t":
        nx, ny = array_shape(int(value))
        return replace(sys_cfg, nx=nx, ny=ny)
    if var == "error_db":
        return sys_cfg
    raise ConfigurationError(f"unknown sweep variable {var!r}")


def _load_models(methods, checkpoints, models=None):
    from .models import load_checkpoint

    models = dict(models or {})
    missing = [m for m in methods if m in LEARNED and m not in models and m not in checkpoints]
    if missing:
        raise ConfigurationError(f"no checkpoint for learned method(s): {', '.join(missing)}")
    for m in methods:
        if m in LEARNED and m not in models:
            try:
                models[m] = load_checkpoint(checkpoints[m])
            except FileNotFoundError as exc:
                raise ConfigurationError(f"checkpoint for {m} not found: {checkpoints[m]}") from exc
    return models


def _method_hash(sys_cfg: SystemConfig, method: str, models: dict, extra: dict | None = None) -> str:
    model_cfg = None
    if method in models:
        m = models[method]
        model_cfg = {"config": m.config(),
                     "params": config_hash({k: np.asarray(v).round(15).tolist() for k, v in m.params.items()})}
    return config_hash({"system": sys_cfg.to_dict(), "method": method, "model": model_cfg, **(extra or {})})


def _evaluate_method(method, cs, sys_cfg, models, spec_like, seed, csi=None):
    """Precoder EE on the true channel ``cs``; ``csi`` is what the precoder sees (defaults to ``cs``)."""
    pm, bw, p_max = sys_cfg.power_model, sys_cfg.bandwidth, sys_cfg.p_max
    seen = cs if csi is None else csi
    t = time.perf_counter()
    if method == "wmmse":
        res = dinkelbach_solve(seen, pm, bw, p_max)
        b, converged = res.b, res.converged
    elif method in LEARNED:
        b, converged = models[method].precode_info(seen, pm, bw, p_max)
    else:
        spec = BaselineSpec(method, spec_like.rzf_regularization if method == "rzf" else None)
        out = baseline_ee(cs, spec, pm, bw, p_max, n_draws=spec_like.baseline_draws,
                          seed=child_seed(seed, 11), paths_per_user=sys_cfg.distribution.paths_per_user)
        dt = max(time.perf_counter() - t, 1e-9)
        return out["ee"], out["sum_rate"], (out["power"] - pm.p_t) / pm.xi, dt, True
    dt = max(time.perf_counter() - t, 1e-9)
    if not is_feasible(b, p_max):
        raise AssertionError(f"{method} returned an infeasible precoder")
    br = energy_efficiency(cs, b, pm, bw)
    return br.ee, br.sum_rate, float(np.sum(np.abs(b) ** 2)), dt, converged


def run_experiment(spec: ExperimentSpec, done=(), models: dict | None = None) -> list[ResultRecord]:
    """New records for every ``(sweep value, seed, method, repetition)`` not already in ``done``.

    Repetitions beyond the first re-run the same channel draw (useful for
    timing); they are told apart by the ``seed`` field offset of
    ``repetition * 1_000_000``.
    """
    models = _load_models(spec.methods, spec.checkpoints, models)
    seen = {r.key() for r in done}
    out = []
    for value in spec.grid:
        sys_cfg = apply_sweep(spec.system, spec.sweep_var, value)
        for method in spec.methods:
            chash = _method_hash(sys_cfg, method, models, {"baseline_draws": spec.baseline_draws,
                                                           "rzf": spec.rzf_regularization})
            for seed in spec.seeds:
                for rep in range(spec.repetitions):
                    rec_seed = int(seed) + rep * 1_000_000
                    key = (spec.experiment_id, chash, method, rec_seed, spec.sweep_var, float(value))
                    if key in seen:
                        continue
                    cs = draw_channel_set(sys_cfg.geometry, sys_cfg.k, child_seed(seed, EXPERIMENT_NAMESPACE),
                                          sys_cfg.distribution, snr_db=sys_cfg.snr_db, p_max=sys_cfg.p_max)
                    csi = None
                    if spec.sweep_var == "error_db":
                        csi = perturb_csi(cs, float(value), child_seed(seed, CSI_ERROR_NAMESPACE))
                    ee, rate, power, dt, conv = _evaluate_method(method, cs, sys_cfg, models, spec, seed, csi)
                    out.append(ResultRecord(chash, method, rec_seed, spec.sweep_var, float(value), ee, rate, power,
                                            dt, bool(conv), spec.experiment_id))
                    seen.add(key)
    return out


def robustness_sweep(methods, error_db_grid, seeds, sys_cfg: SystemConfig | None = None, models=None,
                     checkpoints=None, done=(), experiment_id: str = "robustness") -> list[ResultRecord]:
    """EE on the true channel of precoders computed from perturbed statistical CSI.

    ``NO_ERROR`` (``-inf``) in the grid gives the clean reference.
    """
    bad = [m for m in methods if m not in ("wmmse",) + LEARNED]
    if bad:
        raise ConfigurationError(f"robustness applies to statistical-CSI methods only, not {', '.join(bad)}")
    spec = ExperimentSpec(experiment_id, tuple(methods), "error_db", tuple(float(x) for x in error_db_grid),
                          sys_cfg or SystemConfig.desk(), tuple(seeds), checkpoints=dict(checkpoints or {}))
    return run_experiment(spec, done, models)


def degradation(records, method: str, error_db: float) -> np.ndarray:
    """Per-seed relative EE loss at ``error_db`` against the ``NO_ERROR`` run of the same seed."""
    clean = {r.seed: r.ee for r in records if r.method == method and r.sweep_value == NO_ERROR}
    noisy = {r.seed: r.ee for r in records if r.method == method and r.sweep_value == error_db}
    seeds = sorted(set(clean) & set(noisy))
    if not seeds:
        raise ValueError(f"no paired records for {method} at {error_db} dB")
    return np.array([(clean[s] - noisy[s]) / clean[s] for s in seeds])


def bootstrap_mean_ci(x, n_boot: int = 10000, level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, x.size, size=(n_boot, x.size))].mean(axis=1)
    a = (1 - level) / 2
    return float(np.quantile(means, a)), float(np.quantile(means, 1 - a))


@dataclass
class TimingResult:
    records: list[ResultRecord]
    medians: dict  # (method, k, n_t) -> median seconds per call
    slopes: dict  # (method, k) -> log-log slope of time vs n_t


def _replay_triples(cs, sys_cfg):
    """(cs, u, w, rho) arguments of every b-update along the exact solver's trajectory."""
    pm, bw, p_max = sys_cfg.power_model, sys_cfg.bandwidth, sys_cfg.p_max
    exact = _exact_update(pm, bw, p_max)
    triples = []

    def recorder(c, u, w, rho):
        triples.append((c, u, w, rho))
        return exact(c, u, w, rho)

    dinkelbach_loop(cs, pm, bw, p_max, recorder)
    return triples


def timing_benchmark(methods, nt_grid, k_grid, reps: int = 5, seeds=(0, 1, 2), models=None,
                     sys_cfg: SystemConfig | None = None, mode: str = "update") -> TimingResult:
    """Median wall-clock time per precoder call and its log-log slope against ``N_t``.

    ``mode="update"`` times the b-update (the only step in which the exact and
    unfolded solvers differ) on every iterate of the exact solver's
    trajectories, so both methods see identical inputs.  ``mode="solve"``
    times complete precoder calls, whose iteration counts vary with the
    channel.  The end-to-end model and the baselines have a single forward
    computation, timed the same way in both modes.
    """
    if reps < 5:
        raise ConfigurationError("timing needs at least 5 repetitions")
    if mode not in ("update", "solve"):
        raise ConfigurationError(f"unknown timing mode {mode!r}")
    from .models import E2EModel, UnfoldedModel

    models = dict(models or {})
    models.setdefault("unfolded", UnfoldedModel())
    models.setdefault("e2e", E2EModel())
    base = sys_cfg or SystemConfig.desk()
    records, medians, slopes = [], {}, {}
    for k in k_grid:
        for n_t in nt_grid:
            cfg = apply_sweep(replace(base, k=int(k)), "n_t", n_t)
            pm, bw, p_max = cfg.power_model, cfg.bandwidth, cfg.p_max
            sets = [draw_channel_set(cfg.geometry, cfg.k, child_seed(s, EXPERIMENT_NAMESPACE), cfg.distribution,
                                     snr_db=cfg.snr_db, p_max=cfg.p_max) for s in seeds]
            triples = [t for cs in sets for t in _replay_triples(cs, cfg)] if mode == "update" else []
            for method in methods:
                calls = _timed_calls(method, sets, triples, cfg, models, mode)
                times = []
                for _ in range(reps):
                    t = time.perf_counter()
                    for c in calls:
                        c()
                    times.append((time.perf_counter() - t) / len(calls))
                med = float(np.median(times))
                medians[(method, int(k), int(n_t))] = med
                chash = _method_hash(cfg, method, models, {"timing_mode": mode})
                for s, cs in zip(seeds, sets):
                    b = _precode_once(method, cs, cfg, models)
                    br = energy_efficiency(cs, b, pm, bw)
                    records.append(ResultRecord(chash, method, int(s), "n_t", float(n_t), br.ee, br.sum_rate,
                                                float(np.sum(np.abs(b) ** 2)), max(med, 1e-12), True, "timing"))
        for method in methods:
            xs = np.log(np.asarray(nt_grid, dtype=float))
            ys = np.log([medians[(method, int(k), int(n))] for n in nt_grid])
            slopes[(method, int(k))] = float(np.polyfit(xs, ys, 1)[0]) if len(nt_grid) > 1 else float("nan")
    return TimingResult(records, medians, slopes)


def _precode_once(method, cs, cfg, models):
    pm, bw, p_max = cfg.power_model, cfg.bandwidth, cfg.p_max
    if method == "wmmse":
        return dinkelbach_solve(cs, pm, bw, p_max).b
    if method in LEARNED:
        return models[method].precode(cs, pm, bw, p_max)
    h = draw_fast_fading(cs, cfg.distribution.paths_per_user, child_seed(cs.seed, 11)).h
    return precode_baseline(h, BaselineSpec(method, 1.0 if method == "rzf" else None), p_max, cs.n0)


def _timed_calls(method, sets, triples, cfg, models, mode):
    pm, bw, p_max = cfg.power_model, cfg.bandwidth, cfg.p_max
    if mode == "update" and method in ("wmmse", "unfolded"):
        if method == "wmmse":
            step = _exact_update(pm, bw, p_max)
        else:
            m = models["unfolded"]
            step = unfolded_b_update(UnfoldedParams(m.params["theta"]), pm, bw, p_max, m.activation, m.init)
        return [lambda t=t: step(*t) for t in triples]
    return [lambda cs=cs: _precode_once(method, cs, cfg, models) for cs in sets]
