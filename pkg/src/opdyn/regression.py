"""Linear-regression baseline for estimating (beta, q) from trajectory prefixes.

Feature layout.  For a prefix of t timesteps each timestep contributes, in
this order and filtered by the source flags:

    N_A,
    D_hh mean, variance, variance^2   (per-household A-count),
    D_wp mean, variance, variance^2   (per-workplace A-proportion,
                                       reconstruced from decile midpoints),
    S_wp mean, variance, variance^2   (workplace size),
    M_wp,
    N_ch

concatenated timestep-major (all of timestep 1, then timestep 2, ...).
Variances are population variances across groups.  Full information is 12
features per timestep: 240 at t=20 and 3600 at t=300; N_A alone gives t
features.

One pooled model is fit per target over all grid cells, trained on the
per-cell 80/20 rep split recorded in the shared split manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from opdyn.seeds import TAG_SPLIT, mix64
from opdyn.stats import D_WP_BINS, D_WP_MIDPOINTS, S_WP_BINS
from opdyn.sweep import TrajectoryDataset

SCALAR_SOURCES = ("n_a", "m_wp", "n_ch")
DISTRIBUTION_SOURCES = ("d_hh", "d_wp", "s_wp")
ALL_SOURCES = ("n_a", "d_hh", "d_wp", "s_wp", "m_wp", "n_ch")

# named feature sets mirroring the report rows
FEATURE_SETS = {
    "all": ALL_SOURCES,
    "no_nch": ("n_a", "d_hh", "d_wp", "s_wp", "m_wp"),
    "no_nch_mwp": ("n_a", "d_hh", "d_wp", "s_wp"),
    "dhh_dwp": ("d_hh", "d_wp"),
    "dhh": ("d_hh",),
    "na": ("n_a",),
}


@dataclass(frozen=True)
class FeatureSpec:
    horizon: int
    sources: tuple = ALL_SOURCES

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.sources:
            raise ValueError("at least one feature source is required")
        unknown = set(self.sources) - set(ALL_SOURCES)
        if unknown:
            raise ValueError(f"unknown feature sources {sorted(unknown)}")

    @property
    def width(self) -> int:
        """Features contributed per timestep."""
        scalars = sum(s in self.sources for s in SCALAR_SOURCES)
        dists = sum(s in self.sources for s in DISTRIBUTION_SOURCES)
        return scalars + 3 * dists

    @property
    def feature_count(self) -> int:
        return self.horizon * self.width

    def column_names(self) -> list:
        per_step = []
        for src in ALL_SOURCES:
            if src not in self.sources:
                continue
            if src in SCALAR_SOURCES:
                per_step.append(src)
            else:
                per_step.extend([f"{src}_mean", f"{src}_var", f"{src}_var2"])
        return [f"t{t}_{name}" for t in range(1, self.horizon + 1) for name in per_step]


def _moments(counts, values):
    """Population mean/variance of a binned quantity; counts (..., bins)."""
    total = counts.sum(axis=-1)
    mean = (counts * values).sum(axis=-1) / total
    ex2 = (counts * values**2).sum(axis=-1) / total
    var = ex2 - mean**2
    return mean, var


def build_features(stats, spec: FeatureSpec, household_size: int = 5) -> np.ndarray:
    """Feature matrix from statistics arrays of shape (T, width) or
    (runs, T, width); returns (runs, spec.feature_count)."""
    arr = np.asarray(stats, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.shape[1] < spec.horizon:
        raise ValueError(f"prefix has {arr.shape[1]} records, horizon is {spec.horizon}")
    arr = arr[:, : spec.horizon]
    hb = household_size + 1
    cols = []
    for src in ALL_SOURCES:
        if src not in spec.sources:
            continue
        if src == "n_a":
            cols.append(arr[:, :, 0])
        elif src == "m_wp":
            cols.append(arr[:, :, -2])
        elif src == "n_ch":
            cols.append(arr[:, :, -1])
        else:
            if src == "d_hh":
                counts = arr[:, :, 1 : 1 + hb]
                values = np.arange(hb, dtype=np.float64)
            elif src == "d_wp":
                counts = arr[:, :, 1 + hb : 1 + hb + D_WP_BINS]
                values = D_WP_MIDPOINTS
            else:
                counts = arr[:, :, 1 + hb + D_WP_BINS : 1 + hb + D_WP_BINS + S_WP_BINS]
                values = np.arange(1, S_WP_BINS + 1, dtype=np.float64)
            mean, var = _moments(counts, values)
            cols.extend([mean, var, var**2])
    stacked = np.stack(cols, axis=-1)  # (runs, horizon, width)
    return stacked.reshape(stacked.shape[0], spec.feature_count)


def fit_ols(features, targets, ridge: float = 1e-8):
    """Least squares via QR on the (tiny-ridge) augmented system.

    Columns and targets are centered so the ridge does not shrink the
    intercept; the penalty scales with the mean squared column norm.  One
    defect-correction step against the unpenalized objective removes the
    O(ridge) shrinkage bias on well-conditioned problems while the penalty
    keeps rank-deficient designs solvable.  Returns (weights, intercept).
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (rows, p) with matching targets")
    if x.shape[0] < 1:
        raise ValueError("at least one row required")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in regression inputs")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    x_mean = x.mean(axis=0)
    y_mean = y.mean()
    xc = x - x_mean
    yc = y - y_mean
    scale = float((xc**2).sum(axis=0).mean())
    alpha = ridge * (scale if scale > 0 else 1.0)
    p = x.shape[1]
    aug = np.vstack([xc, np.sqrt(alpha) * np.eye(p)])
    qmat, rmat = np.linalg.qr(aug)

    def solve(rhs_top):
        rhs = np.concatenate([rhs_top, np.zeros(p)])
        return scipy.linalg.solve_triangular(rmat, qmat.T @ rhs)

    weights = solve(yc)
    if alpha > 0:
        weights = weights + solve(yc - xc @ weights)
    intercept = y_mean - float(x_mean @ weights)
    return weights, intercept


def predict(features, weights, intercept: float) -> np.ndarray:
    return np.asarray(features, dtype=np.float64) @ weights + intercept


def rmse(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    return float(np.sqrt(np.mean((predicted - actual) ** 2)))


def uniform_baseline_rmse(values) -> float:
    """RMSE of always predicting the grid mean: the population std of the grid."""
    return float(np.asarray(values, dtype=np.float64).std())


@dataclass(frozen=True)
class EstimatorReport:
    target: str
    regime: str
    horizon: int
    sources: tuple
    train_size: int
    test_size: int
    rmse_test: float
    rmse_train: float


def make_split(dataset: TrajectoryDataset, split_seed: int, test_fraction: float = 0.2) -> dict:
    """Per-cell stratified train/test split keyed by rep index.

    Deterministic in (split_seed, cell); the same manifest drives every
    estimator so their test sets coincide.
    """
    cfg = dataset.config
    n_test = round(cfg.reps * test_fraction)
    if n_test < 1 or n_test >= cfg.reps:
        raise ValueError(f"test fraction {test_fraction} leaves no train or test reps")
    cells = {}
    for key in dataset.cell_keys():
        info = dataset.cell_info(key)
        rng = np.random.default_rng(
            mix64(split_seed, TAG_SPLIT, cfg.regime_id, info["beta_idx"], info["q_idx"])
        )
        test = sorted(int(r) for r in rng.choice(cfg.reps, size=n_test, replace=False))
        train = [r for r in range(cfg.reps) if r not in set(test)]
        cells[key] = {
            "regime": cfg.regime,
            "beta": info["beta"],
            "q": info["q"],
            "train_reps": train,
            "test_reps": test,
        }
    return {
        "version": 1,
        "split_seed": split_seed,
        "test_fraction": test_fraction,
        "reps": cfg.reps,
        "cells": cells,
    }


def write_split_manifest(dataset: TrajectoryDataset, path, split_seed: int,
                         test_fraction: float = 0.2) -> Path:
    path = Path(path)
    path.write_text(json.dumps(make_split(dataset, split_seed, test_fraction),
                               indent=2, sort_keys=True) + "\n")
    return path


def load_split_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def _target_value(info: dict, target: str) -> float:
    if target == "beta":
        return float(info["beta"])
    if target == "q":
        return float(info["q"])
    raise ValueError(f"target must be beta or q, got {target!r}")


def evaluate(dataset: TrajectoryDataset, target: str, spec: FeatureSpec,
             split_seed: int = 0, split: dict | None = None,
             ridge: float = 1e-8) -> EstimatorReport:
    """Fit one pooled model over all cells and report held-out RMSE."""
    cfg = dataset.config
    if split is None:
        split = make_split(dataset, split_seed)
    if split.get("reps") != cfg.reps:
        raise ValueError("split manifest does not match dataset rep count")
    x_train, y_train, x_test, y_test = [], [], [], []
    for key in dataset.cell_keys():
        info = dataset.cell_info(key)
        value = _target_value(info, target)
        feats = build_features(
            dataset.cell_stats(key, t_max=spec.horizon), spec, cfg.household_size
        )
        part = split["cells"][key]
        x_train.append(feats[part["train_reps"]])
        x_test.append(feats[part["test_reps"]])
        y_train.append(np.full(len(part["train_reps"]), value))
        y_test.append(np.full(len(part["test_reps"]), value))
    x_train = np.concatenate(x_train)
    x_test = np.concatenate(x_test)
    y_train = np.concatenate(y_train)
    y_test = np.concatenate(y_test)
    weights, intercept = fit_ols(x_train, y_train, ridge)
    return EstimatorReport(
        target=target,
        regime=cfg.regime,
        horizon=spec.horizon,
        sources=spec.sources,
        train_size=x_train.shape[0],
        test_size=x_test.shape[0],
        rmse_test=rmse(predict(x_test, weights, intercept), y_test),
        rmse_train=rmse(predict(x_train, weights, intercept), y_train),
    )


def report_table(dataset: TrajectoryDataset, target: str, horizons,
                 feature_sets=None, split_seed: int = 0,
                 split: dict | None = None) -> list:
    """EstimatorReports for every (feature set, horizon) combination."""
    if split is None:
        split = make_split(dataset, split_seed)
    if feature_sets is None:
        feature_sets = dict(FEATURE_SETS)
    reports = []
    for name, sources in feature_sets.items():
        for horizon in horizons:
            spec = FeatureSpec(horizon=horizon, sources=tuple(sources))
            reports.append((name, evaluate(dataset, target, spec, split=split)))
    return reports
