"""Command-line interface for the ML estimators.

Consumes the simulator's CSV export plus the shared split manifest and
prints report tables (rows = method and feature selection, columns per
horizon).  Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys

from mlest import convnet, data, trees

# commonly reported feature-flag subsets over {S_wp, D_wp, D_hh, N_A},
# plus the full set
NAMED_SUBSETS = {
    "all": data.ALL_SOURCES,
    "na": ("n_a",),
    "dhh": ("d_hh",),
    "dhh_na": ("d_hh", "n_a"),
    "dwp_na": ("d_wp", "n_a"),
    "swp": ("s_wp",),
    "swp_na": ("s_wp", "n_a"),
    "no_nch_mwp": ("n_a", "d_hh", "d_wp", "s_wp"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sources(name: str) -> tuple:
    if name not in NAMED_SUBSETS:
        raise UsageError(f"unknown feature set {name!r}; choose from {sorted(NAMED_SUBSETS)}")
    return NAMED_SUBSETS[name]


def _horizons(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad horizon list {text!r}") from exc


def _targets(name: str) -> list:
    return ["beta", "q"] if name == "both" else [name]


def _cmd_trees(args):
    config = trees.BoostedTreesConfig(random_state=args.seed)
    rows = []
    for features in args.features.split(","):
        sources = _sources(features.strip())
        for horizon in _horizons(args.horizons):
            ds = data.load_exported_dataset(args.csv, args.split, horizon, sources)
            for target in _targets(args.target):
                report = trees.evaluate_trees(ds, target, horizon, config,
                                              raw_channels=args.raw_channels)
                rows.append((
                    "trees", target, features.strip(), horizon,
                    f"{report.rmse_test:.6f}", f"{100 * report.rmse_test:.2f}",
                ))
    _print(rows)
    return 0


def _cmd_cnn(args):
    config = convnet.ConvNetConfig(
        n_max=args.n_max, epochs=args.epochs, ensemble_size=args.members,
    )
    rows = []
    for features in args.features.split(","):
        sources = _sources(features.strip())
        for horizon in _horizons(args.horizons):
            ds = data.load_exported_dataset(args.csv, args.split, horizon, sources)
            for target in _targets(args.target):
                report = convnet.evaluate_cnn(ds, target, horizon, config,
                                              base_seed=args.seed)
                rows.append((
                    "cnn", target, features.strip(), horizon,
                    f"{report.rmse_test:.6f}", f"{100 * report.rmse_test:.2f}",
                ))
    _print(rows)
    return 0


def _cmd_audit(args):
    config = convnet.ConvNetConfig(n_max=args.n_max)
    print("horizon\tchannels\tpool_kernel\tfinal_length\toutput")
    for horizon in _horizons(args.horizons):
        audit = convnet.shape_audit(config, args.channels, horizon)
        print(f"{horizon}\t{args.channels}\t{audit['pool_kernel']}"
              f"\t{audit['final_length']}\t{audit['output_shape']}")
    return 0


def _print(rows):
    print("method\ttarget\tfeatures\thorizon\trmse_test\trmse_test_x100")
    for row in rows:
        print("\t".join(str(x) for x in row))


def _build_parser():
    parser = _Parser(prog="mlest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trees", help="gradient-boosted tree estimates")
    p.set_defaults(func=_cmd_trees)
    p.add_argument("csv")
    p.add_argument("split")
    p.add_argument("--target", choices=("beta", "q", "both"), default="both")
    p.add_argument("--horizons", default="100")
    p.add_argument("--features", default="all")
    p.add_argument("--raw-channels", action="store_true", dest="raw_channels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("cnn", help="convolutional ensemble estimates")
    p.set_defaults(func=_cmd_cnn)
    p.add_argument("csv")
    p.add_argument("split")
    p.add_argument("--target", choices=("beta", "q", "both"), default="both")
    p.add_argument("--horizons", default="100")
    p.add_argument("--features", default="all")
    p.add_argument("--n-max", type=int, default=1024, dest="n_max")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--members", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("audit", help="network shape audit per horizon")
    p.set_defaults(func=_cmd_audit)
    p.add_argument("--horizons", default="20,30,50,70,100,150,200,300")
    p.add_argument("--channels", type=int, default=33)
    p.add_argument("--n-max", type=int, default=1024, dest="n_max")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (data.DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
