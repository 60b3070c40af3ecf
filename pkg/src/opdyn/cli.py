"""Command-line interface.

Subcommands: simulate, sweep, toy-enumerate, toy-rates, analyze, estimate,
export-csv.  Every flag may also be supplied through a JSON config file
(``--config file.json`` holding an object of flag names without the leading
dashes); explicit command-line flags override the file.  Exit codes:
0 success, 1 usage error, 2 I/O or validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from opdyn import regression, stats, sweep, toy
from opdyn.sweep import DatasetError, SweepConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip() != "")
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _parse_ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip() != "")
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def _apply_config_file(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset (None) options from the JSON config file, if given."""
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        values = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise DatasetError(f"config file {path} must hold a JSON object")
    for key, value in values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"config file key {key!r} is not a known option")
        if getattr(args, attr) is None:
            setattr(args, attr, value)
    return args


def _get(args, name, default):
    value = getattr(args, name)
    return default if value is None else value


def _print_table(rows, header):
    print("\t".join(header))
    for row in rows:
        print("\t".join(str(x) for x in row))


# ---------------------------------------------------------------- simulate


def _cmd_simulate(args):
    regime = _get(args, "regime", "linear")
    config = SweepConfig(
        regime=regime,
        betas=(float(_get(args, "beta", 0.5)),),
        qs=(float(_get(args, "q", 0.5)),),
        reps=1,
        n=int(_get(args, "n", 1000)),
        household_size=int(_get(args, "household_size", 5)),
        mode=_get(args, "mode", "dataset"),
        timesteps=int(_get(args, "timesteps", 300)),
        step_cap=int(_get(args, "step_cap", 10**6)),
        master_seed=int(_get(args, "seed", 0)),
        include_t0=bool(_get(args, "include_t0", False)),
        tau_threshold=float(_get(args, "tau_threshold", 0.4)),
    )
    rows, summary = sweep.run_trajectory(config, 0, 0, 0)
    for name in (
        "final_n_a", "stopping_step", "timesteps", "absorbed", "tau_hh", "tau_wp",
        "final_homophily_hh", "final_homophily_wp", "min_wp_size", "size_overflow",
    ):
        print(f"{name}\t{getattr(summary, name)}")
    print(f"component_sizes\t{' '.join(str(s) for s in summary.component_sizes)}")
    if getattr(args, "per_timestep", False) and rows is not None:
        print("t\t" + "\t".join(f"s{i}" for i in range(rows.shape[1])))
        t0 = 0 if config.include_t0 else 1
        for i in range(rows.shape[0]):
            print(f"{t0 + i}\t" + "\t".join(str(int(x)) for x in rows[i]))
    return 0


# ------------------------------------------------------------------- sweep


def _sweep_config_from_args(args) -> SweepConfig:
    preset = getattr(args, "preset", None)
    kwargs = dict(
        master_seed=int(_get(args, "master_seed", 0)),
        workers=int(_get(args, "workers", 1)),
    )
    regime = _get(args, "regime", "linear")
    if preset == "reference-dataset":
        return SweepConfig.reference_dataset(regime, **kwargs)
    if preset == "reference-longrun":
        return SweepConfig.reference_longrun(regime, **kwargs)
    if preset is not None:
        raise UsageError(f"unknown preset {preset!r}")
    return SweepConfig(
        regime=regime,
        betas=_parse_floats(_get(args, "betas", "0.1,0.5,0.9")),
        qs=_parse_floats(_get(args, "qs", "0.0,0.3,0.6,0.9")),
        reps=int(_get(args, "reps", 10)),
        n=int(_get(args, "n", 1000)),
        household_size=int(_get(args, "household_size", 5)),
        mode=_get(args, "mode", "dataset"),
        timesteps=int(_get(args, "timesteps", 300)),
        step_cap=int(_get(args, "step_cap", 10**6)),
        include_t0=bool(_get(args, "include_t0", False)),
        tau_threshold=float(_get(args, "tau_threshold", 0.4)),
        **kwargs,
    )


def _cmd_sweep(args):
    config = _sweep_config_from_args(args)
    out = sweep.run_sweep(config, args.out)
    total = len(config.betas) * len(config.qs) * config.reps
    print(f"dataset written to {out} ({total} runs)")
    return 0


# ---------------------------------------------------------------- toy cmds


def _cmd_toy_enumerate(args):
    regimes = [_get(args, "regime", "both")]
    if regimes == ["both"]:
        regimes = [toy.LINEAR, toy.NONLINEAR]
    for regime in regimes:
        enum = toy.enumerate_absorbing(regime, lam=float(_get(args, "lam", 0.5)))
        print(
            f"# regime={regime} raw_absorbing={enum.total_raw} "
            f"canonical_classes={enum.class_count}"
        )
        counts = enum.family_raw_counts()
        print("# family raw counts: " + " ".join(f"{k}={v}" for k, v in sorted(counts.items())))
        rows = []
        for c in enum.classes:
            ops, wps = toy.render_state(c.representative)
            rows.append((c.family, c.canonical_key, c.raw_count, ops, wps))
        _print_table(rows, ("family", "canonical_key", "raw_count", "opinions", "workplaces"))
    return 0


def _cmd_toy_rates(args):
    regime = _get(args, "regime", "linear")
    betas = _parse_floats(_get(args, "betas", "0.1,0.5,0.9"))
    qs = _parse_floats(_get(args, "qs", "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"))
    runs = int(_get(args, "runs", 2000))
    master_seed = int(_get(args, "master_seed", 0))
    step_cap = int(_get(args, "step_cap", 10**6))
    header = ["regime", "beta", "q", "homogeneous", "two_households",
              "mixed_households", "variant", "non_absorbed"] + [
        f"rate_{f}" for f in toy.FAMILY_LABELS
    ]
    rows = []
    for beta in betas:
        for q in qs:
            params = toy.toy_params(beta, q, regime)
            rates = toy.absorption_rates(params, runs, master_seed, step_cap)
            variant = sum(v for k, v in rates.family_rates.items() if k.startswith("variant"))
            rows.append(
                [regime, beta, q,
                 f"{rates.homogeneous_rate:.6f}",
                 f"{rates.two_household_rate:.6f}",
                 f"{rates.mixed_household_rate:.6f}",
                 f"{variant:.6f}",
                 f"{rates.non_absorbed:.6f}"]
                + [f"{rates.family_rates.get(f, 0.0):.6f}" for f in toy.FAMILY_LABELS]
            )
    _print_table(rows, header)
    return 0


# ----------------------------------------------------------------- analyze


def _cmd_analyze(args):
    ds = sweep.read_dataset(args.dataset)
    header = ("regime", "beta", "q", "runs", "sigma_final_n_a", "mean_final_n_a",
              "absorbed_fraction", "mean_tau_hh", "missing_tau_hh", "mean_tau_wp",
              "missing_tau_wp", "mean_homophily_hh", "mean_homophily_wp")
    rows = []
    hists = []
    for key in ds.cell_keys():
        info = ds.cell_info(key)
        agg = stats.cross_run_summary(ds.summaries(key))
        rows.append((
            ds.config.regime, info["beta"], info["q"], agg.n_runs,
            f"{agg.sigma_final_n_a:.6f}", f"{agg.mean_final_n_a:.6f}",
            f"{agg.absorbed_fraction:.6f}",
            "" if agg.mean_tau_hh is None else f"{agg.mean_tau_hh:.3f}",
            agg.missing_tau_hh,
            "" if agg.mean_tau_wp is None else f"{agg.mean_tau_wp:.3f}",
            agg.missing_tau_wp,
            f"{agg.mean_homophily_hh:.6f}", f"{agg.mean_homophily_wp:.6f}",
        ))
        hists.append((info["beta"], info["q"], agg.component_count_hist))
    _print_table(rows, header)
    if getattr(args, "components_hist", False):
        print("beta\tq\tn_components\truns")
        for beta, q, hist in hists:
            for n_comp, count in hist.items():
                print(f"{beta}\t{q}\t{n_comp}\t{count}")
    return 0


# ---------------------------------------------------------------- estimate


def _cmd_estimate(args):
    ds = sweep.read_dataset(args.dataset)
    targets = [_get(args, "target", "both")]
    if targets == ["both"]:
        targets = ["beta", "q"]
    horizons = _parse_ints(_get(args, "horizons", "20,100"))
    names = [s.strip() for s in _get(args, "features", "all").split(",")]
    sets = {}
    for name in names:
        if name not in regression.FEATURE_SETS:
            raise UsageError(
                f"unknown feature set {name!r}; choose from {sorted(regression.FEATURE_SETS)}"
            )
        sets[name] = regression.FEATURE_SETS[name]
    split_seed = int(_get(args, "split_seed", 0))
    manifest_path = getattr(args, "split_manifest", None)
    if manifest_path and Path(manifest_path).exists():
        split = regression.load_split_manifest(manifest_path)
    else:
        split = regression.make_split(ds, split_seed)
        if manifest_path:
            Path(manifest_path).write_text(json.dumps(split, indent=2, sort_keys=True) + "\n")
    rows = []
    for target in targets:
        for name, report in regression.report_table(ds, target, horizons, sets, split=split):
            rows.append((
                target, ds.config.regime, name, report.horizon,
                f"{report.rmse_test:.6f}", f"{100 * report.rmse_test:.2f}",
                f"{report.rmse_train:.6f}", report.train_size, report.test_size,
            ))
    _print_table(rows, ("target", "regime", "features", "horizon", "rmse_test",
                        "rmse_test_x100", "rmse_train", "train_size", "test_size"))
    return 0


# -------------------------------------------------------------- export-csv


def _cmd_export_csv(args):
    ds = sweep.read_dataset(args.dataset)
    out = sweep.export_csv(ds, args.out)
    print(f"exported to {out}")
    if getattr(args, "split_manifest", None):
        split_seed = int(_get(args, "split_seed", 0))
        regression.write_split_manifest(ds, args.split_manifest, split_seed)
        print(f"split manifest written to {args.split_manifest}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="opdyn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file with default option values")
        return p

    p = add("simulate", _cmd_simulate, help="run one trajectory and print its summary")
    p.add_argument("--regime", choices=("linear", "nonlinear"))
    p.add_argument("--beta", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--household-size", type=int, dest="household_size")
    p.add_argument("--mode", choices=("dataset", "longrun"))
    p.add_argument("--timesteps", type=int)
    p.add_argument("--step-cap", type=int, dest="step_cap")
    p.add_argument("--seed", type=int)
    p.add_argument("--tau-threshold", type=float, dest="tau_threshold")
    p.add_argument("--include-t0", action="store_const", const=True, dest="include_t0")
    p.add_argument("--per-timestep", action="store_const", const=True, dest="per_timestep")

    p = add("sweep", _cmd_sweep, help="run a full campaign and write the dataset")
    p.add_argument("out", help="output dataset directory")
    p.add_argument("--preset", choices=("reference-dataset", "reference-longrun"))
    p.add_argument("--regime", choices=("linear", "nonlinear"))
    p.add_argument("--betas")
    p.add_argument("--qs")
    p.add_argument("--reps", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--household-size", type=int, dest="household_size")
    p.add_argument("--mode", choices=("dataset", "longrun"))
    p.add_argument("--timesteps", type=int)
    p.add_argument("--step-cap", type=int, dest="step_cap")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--include-t0", action="store_const", const=True, dest="include_t0")
    p.add_argument("--tau-threshold", type=float, dest="tau_threshold")
    p.add_argument("--workers", type=int)

    p = add("toy-enumerate", _cmd_toy_enumerate,
            help="exhaustively enumerate toy-model absorbing classes")
    p.add_argument("--regime", choices=("linear", "nonlinear", "both"))
    p.add_argument("--lam", type=float)

    p = add("toy-rates", _cmd_toy_rates, help="Monte-Carlo toy absorption rates per (beta, q)")
    p.add_argument("--regime", choices=("linear", "nonlinear"))
    p.add_argument("--betas")
    p.add_argument("--qs")
    p.add_argument("--runs", type=int)
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--step-cap", type=int, dest="step_cap")

    p = add("analyze", _cmd_analyze, help="cross-run summary table from a dataset")
    p.add_argument("dataset")
    p.add_argument("--components-hist", action="store_const", const=True, dest="components_hist")

    p = add("estimate", _cmd_estimate, help="regression estimates with held-out RMSE")
    p.add_argument("dataset")
    p.add_argument("--target", choices=("beta", "q", "both"))
    p.add_argument("--horizons")
    p.add_argument("--features", help="comma-separated feature set names")
    p.add_argument("--split-seed", type=int, dest="split_seed")
    p.add_argument("--split-manifest", dest="split_manifest")

    p = add("export-csv", _cmd_export_csv, help="lossless CSV export of a dataset")
    p.add_argument("dataset")
    p.add_argument("out")
    p.add_argument("--split-manifest", dest="split_manifest")
    p.add_argument("--split-seed", type=int, dest="split_seed")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
