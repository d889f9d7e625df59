"""Command-line entry point: ``leo-precoding <verb> [options]``.

Options can also come from a YAML or JSON file given with ``--config``;
flags on the command line win.  Output goes to ``--out-dir``, which defaults
to ``$LEO_PRECODING_OUT`` or ``./results``.

Exit status is 0 when the run finished and every invariant check passed,
1 when an invariant failed and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .channel import NO_ERROR, load_channel_sets, save_channel_sets
from .experiments import (
    ConfigurationError,
    ExperimentSpec,
    degradation,
    bootstrap_mean_ci,
    robustness_sweep,
    run_experiment,
    timing_benchmark,
)
from .models import E2EModel, UnfoldedModel, load_checkpoint, save_checkpoint
from .e2e import E2EConfig
from .records import export_histogram, export_records, read_records
from .system import SystemConfig, energy_efficiency, is_feasible
from .training import TrainConfig, evaluate, make_dataset, train
from .wmmse import dinkelbach_solve

log = logging.getLogger("leo_precoding")

OUT_ENV = "LEO_PRECODING_OUT"
SYSTEM_KEYS = ("nx", "ny", "k", "bandwidth", "amplifier_efficiency", "p_rfc", "p_lo", "p_bb", "p_max", "snr_db")


class InvariantError(AssertionError):
    pass


def _check(cond: bool, msg: str):
    if not cond:
        raise InvariantError(msg)


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _system(args) -> SystemConfig:
    base = SystemConfig.table1() if getattr(args, "preset", "desk") == "table1" else SystemConfig.desk()
    overrides = {k: getattr(args, k) for k in SYSTEM_KEYS if getattr(args, k, None) is not None}
    cfg_sys = (args.file_config or {}).get("system") or {}
    return SystemConfig.from_dict({**base.to_dict(), **cfg_sys, **overrides})


def _out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get(OUT_ENV) or "results")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _add_system(p):
    p.add_argument("--preset", choices=("desk", "table1"), default=None)
    for key in SYSTEM_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int if key in ("nx", "ny", "k") else float)


class _WmmseMethod:
    arch = "wmmse"

    def config(self):
        return {}

    def precode_info(self, cs, pm, bw, p_max):
        res = dinkelbach_solve(cs, pm, bw, p_max)
        return res.b, res.converged


def cmd_generate_data(args) -> int:
    sys_cfg = _system(args)
    out = _out_dir(args)
    train_set, test_set = make_dataset(sys_cfg, args.train_draws, args.test_draws, args.seed)
    _check(not ({c.seed for c in train_set} & {c.seed for c in test_set}), "train and test seeds overlap")
    save_channel_sets(out / "train.json", train_set, sys_cfg.distribution, args.seed)
    save_channel_sets(out / "test.json", test_set, sys_cfg.distribution, args.seed)
    (out / "system.json").write_text(json.dumps(sys_cfg.to_dict(), indent=2))
    print(f"wrote {len(train_set)} train and {len(test_set)} test draws to {out}")
    return 0


def _load_system_for_data(args, data_dir: Path) -> SystemConfig:
    path = data_dir / "system.json"
    if path.exists():
        base = SystemConfig.from_dict(json.loads(path.read_text()))
        overrides = {k: getattr(args, k) for k in SYSTEM_KEYS if getattr(args, k, None) is not None}
        return replace(base, **overrides)
    return _system(args)


def cmd_train(args) -> int:
    out = _out_dir(args)
    data_dir = Path(args.data_dir or out)
    try:
        train_set, _ = load_channel_sets(data_dir / "train.json")
        test_set, _ = load_channel_sets(data_dir / "test.json")
    except FileNotFoundError as exc:
        raise ConfigurationError(f"dataset missing: {exc.filename}; run generate-data first") from exc
    sys_cfg = _load_system_for_data(args, data_dir)
    if args.arch == "unfolded":
        model = UnfoldedModel(n_layers=args.layers, activation=args.activation, start=args.start)
    else:
        model = E2EModel(cfg=E2EConfig(n_layers=args.layers, edge_dim=args.edge_dim), seed=args.seed)
    tcfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, train_draws=len(train_set),
                       test_draws=len(test_set), epochs=args.epochs, patience=args.patience, seed=args.seed)
    ckpt = Path(args.checkpoint or out / f"{args.arch}.ckpt.json")
    res = train(model, tcfg, train_set, test_set, sys_cfg.power_model, sys_cfg.bandwidth, sys_cfg.p_max)
    save_checkpoint(model, ckpt, {"train_config": tcfg.to_dict(), "system": sys_cfg.to_dict(),
                                  "best_epoch": res.best_epoch, "test_curve": res.test_curve})
    with (out / f"{args.arch}.loss.csv").open("w") as fh:
        fh.write("step,loss\n")
        fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(res.loss_curve))
    _check(all(np.isfinite(res.loss_curve)), "non-finite training loss")
    _check(all(np.all(np.isfinite(v)) for v in model.params.values()), "non-finite parameters")
    print(f"checkpoint {ckpt}; best test EE {max(res.test_curve):.6g} at epoch {res.best_epoch}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    data = Path(args.data or out / "test.json")
    if not data.exists():
        raise ConfigurationError(f"test set {data} not found")
    test_set, _ = load_channel_sets(data)
    sys_cfg = _load_system_for_data(args, data.parent)
    if args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise ConfigurationError(f"checkpoint {args.checkpoint} not found")
        model = load_checkpoint(args.checkpoint)
    elif args.method == "wmmse":
        model = _WmmseMethod()
    else:
        raise ConfigurationError("evaluate needs --checkpoint or --method wmmse")
    res = evaluate(model, test_set, sys_cfg.power_model, sys_cfg.bandwidth, sys_cfg.p_max, sys_cfg=sys_cfg,
                   bin_width=args.bin_width)
    name = model.arch
    export_records(res.records, out / f"eval_{name}.csv")
    export_histogram(res.records, out / f"eval_{name}_hist.csv", args.bin_width)
    _check(int(res.hist_counts.sum()) == len(test_set), "histogram does not cover the test set")
    _check(all(r.power_used <= sys_cfg.p_max * (1 + 1e-9) for r in res.records), "infeasible precoder")
    print(f"{name}: mean EE {res.mean:.6g} bits/J (std {res.std:.3g}) over {len(test_set)} draws")
    return 0


def _spec_from_args(args) -> ExperimentSpec:
    doc = dict((args.file_config or {}).get("experiment") or {})
    if args.spec:
        doc.update(yaml.safe_load(Path(args.spec).read_text()) or {})
    if "system" not in doc:
        doc["system"] = _system(args).to_dict()
    if args.methods:
        doc["methods"] = args.methods.split(",")
    if args.sweep_var:
        doc["sweep_var"] = args.sweep_var
    if args.grid:
        doc["grid"] = _floats(args.grid)
    if args.seeds is not None:
        doc["seeds"] = args.seeds
    doc.setdefault("experiment_id", args.experiment_id)
    missing = [k for k in ("methods", "sweep_var", "grid") if k not in doc]
    if missing:
        raise ConfigurationError(f"experiment spec lacks {', '.join(missing)}")
    return ExperimentSpec.from_dict(doc)


def cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    out = _out_dir(args)
    path = out / f"{spec.experiment_id}.jsonl"
    done = read_records(path) if path.exists() else []
    new = run_experiment(spec, done)
    records = list(done) + new
    export_records(records, path)
    export_records(records, out / f"{spec.experiment_id}.csv")
    _check(all(r.ee >= 0 and r.wall_time_s > 0 for r in records), "invalid record")
    _check(all(r.power_used <= r_sys_pmax(spec, r) * (1 + 1e-9) for r in new), "infeasible precoder")
    print(f"{len(new)} new records ({len(records)} total) in {path}")
    return 0


def r_sys_pmax(spec: ExperimentSpec, r) -> float:
    return float(r.sweep_value) if spec.sweep_var == "p_max" else spec.system.p_max


def cmd_bench(args) -> int:
    out = _out_dir(args)
    sys_cfg = _system(args)
    res = timing_benchmark(args.methods.split(","), _ints(args.nt_grid), _ints(args.k_grid), args.reps,
                           seeds=tuple(range(args.seeds or 3)), sys_cfg=sys_cfg, mode=args.mode)
    export_records(res.records, out / "timing.csv")
    slopes = {f"{m}@K={k}": s for (m, k), s in res.slopes.items()}
    medians = {f"{m}@K={k}@N={n}": t for (m, k, n), t in res.medians.items()}
    (out / "timing_slopes.json").write_text(json.dumps({"mode": args.mode, "slopes": slopes, "medians": medians},
                                                       indent=2))
    for key, s in slopes.items():
        print(f"slope {key}: {s:.3f}")
    _check(all(t > 0 for t in res.medians.values()), "non-positive timing")
    return 0


def cmd_robustness(args) -> int:
    out = _out_dir(args)
    sys_cfg = _system(args)
    methods = args.methods.split(",")
    ckpts = {}
    if args.unfolded_checkpoint:
        ckpts["unfolded"] = args.unfolded_checkpoint
    if args.e2e_checkpoint:
        ckpts["e2e"] = args.e2e_checkpoint
    grid = [NO_ERROR] + [g for g in _floats(args.grid) if g != NO_ERROR]
    records = robustness_sweep(methods, grid, range(args.seeds or 100), sys_cfg, checkpoints=ckpts)
    export_records(records, out / "robustness.csv")
    summary = {}
    for m in methods:
        for g in grid[1:]:
            d = degradation(records, m, g)
            summary[f"{m}@{g:g}dB"] = {"mean": float(d.mean()), "ci95": bootstrap_mean_ci(d)}
    (out / "robustness_summary.json").write_text(json.dumps(summary, indent=2))
    for k, v in summary.items():
        print(f"{k}: relative EE loss {v['mean']:.4f} (95% CI {v['ci95'][0]:.4f}..{v['ci95'][1]:.4f})")
    clean = [r for r in records if r.sweep_value == NO_ERROR]
    _check(len(clean) == len(methods) * (args.seeds or 100), "missing clean reference runs")
    return 0


def cmd_export(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise ConfigurationError(f"{src} not found")
    records = read_records(src)
    dst = export_records(records, args.output)
    if args.histogram:
        export_histogram(records, args.histogram, args.bin_width)
    _check(read_records(dst) == records, "export round trip changed the records")
    print(f"{len(records)} records -> {dst}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="leo-precoding", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML or JSON file with option defaults")
    p.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or ./results)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("generate-data", help="draw train/test channel sets")
    _add_system(g)
    g.add_argument("--train-draws", type=int, default=2000)
    g.add_argument("--test-draws", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train a learned precoder")
    _add_system(t)
    t.add_argument("--arch", choices=("unfolded", "e2e"), required=True)
    t.add_argument("--data-dir")
    t.add_argument("--checkpoint")
    t.add_argument("--layers", type=int, default=3)
    t.add_argument("--edge-dim", type=int, default=16)
    t.add_argument("--activation", choices=("identity", "leaky_relu"), default="identity")
    t.add_argument("--start", choices=("exact_taylor", "zeros"), default="exact_taylor")
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint or the exact solver on a test set")
    _add_system(e)
    e.add_argument("--data")
    e.add_argument("--checkpoint")
    e.add_argument("--method", choices=("wmmse",))
    e.add_argument("--bin-width", type=float)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="run an experiment grid")
    _add_system(s)
    s.add_argument("--spec", help="YAML/JSON experiment spec")
    s.add_argument("--experiment-id", default="sweep")
    s.add_argument("--methods")
    s.add_argument("--sweep-var")
    s.add_argument("--grid")
    s.add_argument("--seeds", type=int)
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="runtime scaling benchmark")
    _add_system(b)
    b.add_argument("--methods", default="wmmse,unfolded")
    b.add_argument("--nt-grid", default="16,32,64,128")
    b.add_argument("--k-grid", default="4")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--seeds", type=int)
    b.add_argument("--mode", choices=("update", "solve"), default="update")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("robustness", help="EE under imperfect statistical CSI")
    _add_system(r)
    r.add_argument("--methods", default="wmmse,unfolded,e2e")
    r.add_argument("--grid", default="-20,-10,-5")
    r.add_argument("--seeds", type=int)
    r.add_argument("--unfolded-checkpoint")
    r.add_argument("--e2e-checkpoint")
    r.set_defaults(func=cmd_robustness)

    x = sub.add_parser("export", help="convert records between csv and jsonl")
    x.add_argument("--input", required=True)
    x.add_argument("--output", required=True)
    x.add_argument("--histogram")
    x.add_argument("--bin-width", type=float)
    x.set_defaults(func=cmd_export)
    return p


def _apply_file_config(parser, argv):
    """Parse once to find ``--config``, then re-parse with its values as defaults."""
    args = parser.parse_args(argv)
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"config file {path} not found")
        doc = yaml.safe_load(path.read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a mapping")
        flat = {k.replace("-", "_"): v for k, v in doc.items() if not isinstance(v, dict)}
        verb_opts = doc.get(args.verb) or {}
        flat.update({k.replace("-", "_"): v for k, v in verb_opts.items()})
        for action in parser._subparsers._group_actions[0].choices[args.verb]._actions:
            if action.dest in flat:
                action.default = flat[action.dest]
        for action in parser._actions:
            if action.dest in flat:
                action.default = flat[action.dest]
        args = parser.parse_args(argv)
    args.file_config = doc
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_file_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except AssertionError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
