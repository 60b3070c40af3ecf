"""Loading the simulator's CSV export and shared split manifest.

The export carries one row per (regime, beta, q, rep, t) with integer
statistics columns: N_A, D_hh_0..D_hh_<hs>, D_wp_1..D_wp_10, S_wp_1..S_wp_14,
M_wp, N_ch.  The split manifest (JSON) lists train/test rep indices per cell;
all estimators must use it unchanged so their test sets coincide.

Channels are normalized by fixed structural totals: population counts (N_A,
M_wp, N_ch) by n, household bins by the household count, workplace bins by
the workplace count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

D_WP_BINS = 10
S_WP_BINS = 14

# channel groups in CSV column order; flags select whole groups
SOURCE_ORDER = ("n_a", "d_hh", "d_wp", "s_wp", "m_wp", "n_ch")
ALL_SOURCES = SOURCE_ORDER


class DataError(Exception):
    pass


class SplitMismatchError(DataError):
    pass


@dataclass(frozen=True)
class LoadedDataset:
    """Trajectory tensor plus targets and the shared train/test split.

    ``channels`` has shape (runs, selected_channels, horizon), normalized and
    float32; ``features_raw`` keeps the unnormalized full 33-channel block
    for moment-style feature construction.
    """

    channels: np.ndarray
    features_raw: np.ndarray
    beta: np.ndarray
    q: np.ndarray
    cell_keys: list
    train_idx: np.ndarray
    test_idx: np.ndarray
    sources: tuple
    channel_names: list
    n: int
    num_households: int
    num_workplaces: int
    household_size: int

    def target(self, name: str) -> np.ndarray:
        if name == "beta":
            return self.beta
        if name == "q":
            return self.q
        raise ValueError(f"target must be beta or q, got {name!r}")


def _column_groups(columns) -> dict:
    hs_bins = sorted(
        int(c.split("_")[-1]) for c in columns if c.startswith("D_hh_")
    )
    if not hs_bins:
        raise DataError("export is missing D_hh columns")
    groups = {
        "n_a": ["N_A"],
        "d_hh": [f"D_hh_{k}" for k in hs_bins],
        "d_wp": [f"D_wp_{k}" for k in range(1, D_WP_BINS + 1)],
        "s_wp": [f"S_wp_{k}" for k in range(1, S_WP_BINS + 1)],
        "m_wp": ["M_wp"],
        "n_ch": ["N_ch"],
    }
    for cols in groups.values():
        missing = [c for c in cols if c not in columns]
        if missing:
            raise DataError(f"export is missing columns {missing}")
    return groups


def load_exported_dataset(csv_path, split_path, horizon: int,
                          sources=ALL_SOURCES) -> LoadedDataset:
    """Read the CSV export and split manifest into training tensors.

    Raises SplitMismatchError when the manifest's cells or rep counts do not
    match the export.
    """
    sources = tuple(sources)
    unknown = set(sources) - set(ALL_SOURCES)
    if unknown:
        raise ValueError(f"unknown sources {sorted(unknown)}")
    if not sources:
        raise ValueError("at least one channel source is required")
    split = json.loads(Path(split_path).read_text())
    frame = pd.read_csv(csv_path)
    groups = _column_groups(frame.columns)
    hs_bins = len(groups["d_hh"])
    stat_cols = [c for cols in groups.values() for c in cols]

    frame = frame[frame["t"] <= horizon]
    if frame.empty or frame["t"].max() < horizon:
        raise DataError(f"export holds fewer than {horizon} timesteps")

    manifest_cells = split["cells"]
    by_value = {
        (c["regime"], float(c["beta"]), float(c["q"])): (key, c)
        for key, c in manifest_cells.items()
    }

    runs_channels = []
    betas, qs, keys = [], [], []
    train_idx, test_idx = [], []
    grouped = frame.groupby(["regime", "beta", "q"], sort=True)
    for (regime, beta, q), cell_frame in grouped:
        lookup = (regime, float(beta), float(q))
        if lookup not in by_value:
            raise SplitMismatchError(f"cell {lookup} missing from split manifest")
        key, part = by_value[lookup]
        reps = sorted(cell_frame["rep"].unique())
        if reps != list(range(len(reps))) or len(reps) != split["reps"]:
            raise SplitMismatchError(
                f"cell {lookup} has reps {len(reps)}, manifest expects {split['reps']}"
            )
        cell_frame = cell_frame.sort_values(["rep", "t"])
        block = cell_frame[stat_cols].to_numpy(dtype=np.int64)
        block = block.reshape(len(reps), horizon, len(stat_cols))
        base = len(runs_channels) * len(reps)
        train_idx.extend(base + r for r in part["train_reps"])
        test_idx.extend(base + r for r in part["test_reps"])
        runs_channels.append(block)
        betas.extend([float(beta)] * len(reps))
        qs.extend([float(q)] * len(reps))
        keys.extend([key] * len(reps))

    missing = set(manifest_cells) - set(keys)
    if missing:
        raise SplitMismatchError(f"split manifest cells absent from export: {sorted(missing)}")

    raw = np.concatenate(runs_channels)  # (runs, horizon, 33)
    num_households = int(raw[0, 0, 1 : 1 + hs_bins].sum())
    num_workplaces = int(raw[0, 0, 1 + hs_bins : 1 + hs_bins + D_WP_BINS].sum())
    household_size = hs_bins - 1
    n = household_size * num_households

    scale = np.concatenate([
        [n], [num_households] * hs_bins, [num_workplaces] * D_WP_BINS,
        [num_workplaces] * S_WP_BINS, [n], [n],
    ]).astype(np.float64)
    normalized = raw / scale

    offsets = {}
    at = 0
    for src in SOURCE_ORDER:
        width = len(groups[src])
        offsets[src] = (at, at + width)
        at += width
    picked = []
    names = []
    for src in SOURCE_ORDER:
        if src in sources:
            lo, hi = offsets[src]
            picked.append(normalized[:, :, lo:hi])
            names.extend(groups[src])
    channels = np.concatenate(picked, axis=2).transpose(0, 2, 1).astype(np.float32)

    return LoadedDataset(
        channels=channels,
        features_raw=raw,
        beta=np.array(betas, dtype=np.float64),
        q=np.array(qs, dtype=np.float64),
        cell_keys=keys,
        train_idx=np.array(sorted(train_idx), dtype=np.int64),
        test_idx=np.array(sorted(test_idx), dtype=np.int64),
        sources=sources,
        channel_names=names,
        n=n,
        num_households=num_households,
        num_workplaces=num_workplaces,
        household_size=household_size,
    )


def moment_features(dataset: LoadedDataset, horizon: int | None = None,
                    sources=None) -> np.ndarray:
    """Per-timestep moment features matching the regression baseline's layout.

    Scalars contribute raw values; each distribution contributes the mean,
    population variance and squared variance of its underlying per-group
    quantity (A-count per household, decile-midpoint A-proportion per
    workplace, workplace size), concatenated timestep-major.
    """
    sources = tuple(sources) if sources is not None else dataset.sources
    raw = dataset.features_raw.astype(np.float64)
    if horizon is not None:
        raw = raw[:, :horizon]
    hs_bins = dataset.household_size + 1
    cols = []
    spans = {
        "n_a": (0, 1),
        "d_hh": (1, 1 + hs_bins),
        "d_wp": (1 + hs_bins, 1 + hs_bins + D_WP_BINS),
        "s_wp": (1 + hs_bins + D_WP_BINS, 1 + hs_bins + D_WP_BINS + S_WP_BINS),
        "m_wp": (raw.shape[2] - 2, raw.shape[2] - 1),
        "n_ch": (raw.shape[2] - 1, raw.shape[2]),
    }
    values = {
        "d_hh": np.arange(hs_bins, dtype=np.float64),
        "d_wp": (2 * np.arange(1, D_WP_BINS + 1) - 1) / (2 * D_WP_BINS),
        "s_wp": np.arange(1, S_WP_BINS + 1, dtype=np.float64),
    }
    for src in SOURCE_ORDER:
        if src not in sources:
            continue
        lo, hi = spans[src]
        block = raw[:, :, lo:hi]
        if src in values:
            total = block.sum(axis=-1)
            mean = (block * values[src]).sum(axis=-1) / total
            var = (block * values[src] ** 2).sum(axis=-1) / total - mean**2
            cols.extend([mean, var, var**2])
        else:
            cols.append(block[:, :, 0])
    stacked = np.stack(cols, axis=-1)
    return stacked.reshape(stacked.shape[0], -1)


def uniform_baseline_rmse(values) -> float:
    """Population std of the grid values: the RMSE of guessing the mean."""
    return float(np.asarray(values, dtype=np.float64).std())


def rmse(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    return float(np.sqrt(np.mean((predicted - actual) ** 2)))
