"""Reproducible simulation campaigns over a (beta, q) grid.

Dataset layout (``run_sweep`` output directory):

* ``manifest.json`` — format version, config echo, cell index, seed scheme.
* ``cells/<key>.bin`` — dataset mode only: one fixed-size block per rep,
  holding the per-timestep statistics as little-endian int32 rows followed by
  a CRC32 of the payload.
* ``cells/<key>.summaries.csv`` — one terminal-summary row per rep, including
  the run seed.

Per-run seeds derive from (master_seed, regime id, beta index, q index, rep)
through the splitmix64 chain in ``opdyn.seeds``, so any (cell, rep) can be
re-executed independently: datasets are a pure function of the config, and
serial and parallel execution produce identical bytes.  Interrupted sweeps
resume from a ``.progress.jsonl`` work log that is folded into the final
summaries and removed on completion.
"""

from __future__ import annotations

import csv
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from opdyn import _kernel
from opdyn.model import ModelParams, build_initial_state, is_absorbing
from opdyn.seeds import TAG_DYNAMICS, TAG_INIT, mix64
from opdyn.stats import (
    D_WP_BINS,
    S_WP_BINS,
    RunSummary,
    _homophily_from_counts,
    components,
    snapshot,
)

FORMAT_VERSION = 1

DATASET_MODE = "dataset"
LONGRUN_MODE = "longrun"
LINEAR = "linear"
NONLINEAR = "nonlinear"
_REGIME_ID = {LINEAR: 1, NONLINEAR: 2}

SEED_SCHEME = (
    "run_seed = mix64(master_seed, regime_id, beta_idx, q_idx, rep); "
    "init stream = mix64(run_seed, 1), dynamics stream = mix64(run_seed, 2); "
    "mix64 = splitmix64 chain, streams feed numpy PCG64"
)


class DatasetError(Exception):
    pass


class DatasetVersionError(DatasetError):
    pass


class DatasetChecksumError(DatasetError):
    pass


class DatasetValidationError(DatasetError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    regime: str
    betas: tuple
    qs: tuple
    reps: int
    n: int = 1000
    household_size: int = 5
    num_workplaces: int = field(default=-1)
    mode: str = DATASET_MODE
    timesteps: int = 300
    step_cap: int = 10**6
    master_seed: int = 0
    include_t0: bool = False
    lam: float = 0.5
    tau_threshold: float = 0.4
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "qs", tuple(float(v) for v in self.qs))
        if self.num_workplaces == -1:
            object.__setattr__(self, "num_workplaces", self.n // self.household_size)
        if self.regime not in _REGIME_ID:
            raise ValueError(f"regime must be linear or nonlinear, got {self.regime!r}")
        if self.mode not in (DATASET_MODE, LONGRUN_MODE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.betas or not self.qs:
            raise ValueError("betas and qs must be nonempty")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.mode == DATASET_MODE and self.timesteps < 0:
            raise ValueError("timesteps must be >= 0")
        if self.mode == LONGRUN_MODE and self.step_cap < 1:
            raise ValueError("step_cap must be >= 1")
        # constructing ModelParams validates the structural constants
        self.cell_params(0, 0)

    @property
    def regime_id(self) -> int:
        return _REGIME_ID[self.regime]

    @property
    def thresholds(self) -> tuple[float, float]:
        return (1.0, 1.0) if self.regime == LINEAR else (0.5, 0.5)

    @property
    def stat_width(self) -> int:
        return 1 + (self.household_size + 1) + D_WP_BINS + S_WP_BINS + 2

    @property
    def records_per_run(self) -> int:
        return self.timesteps + (1 if self.include_t0 else 0)

    def cell_params(self, beta_idx: int, q_idx: int) -> ModelParams:
        r1, r2 = self.thresholds
        return ModelParams(
            beta=self.betas[beta_idx], q=self.qs[q_idx], r1=r1, r2=r2,
            lam=self.lam, n=self.n, household_size=self.household_size,
            num_workplaces=self.num_workplaces,
        )

    def cells(self):
        for bi in range(len(self.betas)):
            for qi in range(len(self.qs)):
                yield bi, qi

    def cell_key(self, beta_idx: int, q_idx: int) -> str:
        return f"{self.regime}_b{beta_idx}_q{q_idx}"

    def run_seed(self, beta_idx: int, q_idx: int, rep: int) -> int:
        return mix64(self.master_seed, self.regime_id, beta_idx, q_idx, rep)

    @classmethod
    def reference_dataset(cls, regime: str, master_seed: int = 0, **kwargs) -> "SweepConfig":
        """The estimation dataset setup: 9x10 grid, 500 reps of 300 timesteps."""
        return cls(
            regime=regime,
            betas=tuple(round(0.1 * i, 1) for i in range(1, 10)),
            qs=tuple(round(0.1 * i, 1) for i in range(10)),
            reps=500, n=1000, mode=DATASET_MODE, timesteps=300,
            master_seed=master_seed, **kwargs,
        )

    @classmethod
    def reference_longrun(cls, regime: str, master_seed: int = 0, **kwargs) -> "SweepConfig":
        """The long-run campaign: absorb-early with a 10^6 micro-step cap."""
        return cls(
            regime=regime,
            betas=tuple(round(0.1 * i, 1) for i in range(1, 10)),
            qs=tuple(round(0.1 * i, 1) for i in range(10)),
            reps=500, n=1000, mode=LONGRUN_MODE, step_cap=10**6,
            master_seed=master_seed, **kwargs,
        )


def run_trajectory(config: SweepConfig, beta_idx: int, q_idx: int, rep: int):
    """Execute one run; returns (stats array or None, RunSummary).

    Dataset mode runs exactly ``timesteps`` blocks of n micro-steps each and
    snapshots after every block; long-run mode stops at absorption or at the
    micro-step cap and keeps only the terminal summary.
    """
    params = config.cell_params(beta_idx, q_idx)
    n = params.n
    seed = config.run_seed(beta_idx, q_idx, rep)
    state = build_initial_state(params, n // 2, mix64(seed, TAG_INIT))
    rng = np.random.default_rng(mix64(seed, TAG_DYNAMICS))

    longrun = config.mode == LONGRUN_MODE
    rows = None
    if not longrun:
        rows = np.zeros((config.records_per_run, config.stat_width), dtype=np.int32)

    hom_hh, hom_wp = _homophily_from_counts(
        state.hh_a, state.household_size, state.wp_a, state.wp_size, n
    )
    tau_hh = 0 if hom_hh > config.tau_threshold else None
    tau_wp = 0 if hom_wp > config.tau_threshold else None
    overflow = bool((state.wp_size > S_WP_BINS).any())

    row_at = 0
    if not longrun and config.include_t0:
        rows[0] = snapshot(state, 0, 0, 0).to_row()
        row_at = 1

    out = np.zeros(_kernel.OUT_LEN, dtype=np.int64)
    out[_kernel.OUT_MIN_WP_SIZE] = int(state.wp_size.min())
    steps = 0
    timesteps_done = 0
    absorbed = longrun and is_absorbing(state, params)
    max_t = config.timesteps if not longrun else -(-config.step_cap // n)
    for t in range(1, max_t + 1):
        if absorbed:
            break
        m = n if not longrun else min(n, config.step_cap - steps)
        vidx = rng.integers(0, n, size=m)
        u_flip = rng.random(m)
        u_move = rng.random(m)
        u_target = rng.random(m)
        _kernel.run_chunk(
            state.opinions, state.household_of, state.workplace_of,
            state.hh_a, state.wp_a, state.wp_size,
            params.household_size, params.beta, params.q,
            params.r1, params.r2, params.lam,
            vidx, u_flip, u_move, u_target,
            m if longrun else 0, out,
        )
        steps += int(out[_kernel.OUT_STEPS])
        timesteps_done = t
        if int(state.wp_size.sum()) != n:
            raise RuntimeError("workplace sizes no longer sum to n")
        rec = snapshot(state, t, int(out[_kernel.OUT_MOVES]), int(out[_kernel.OUT_FLIPS]))
        overflow = overflow or rec.overflow
        if not longrun:
            rows[row_at] = rec.to_row()
            row_at += 1
        hom_hh, hom_wp = _homophily_from_counts(
            state.hh_a, state.household_size, state.wp_a, state.wp_size, n
        )
        if tau_hh is None and hom_hh > config.tau_threshold:
            tau_hh = t
        if tau_wp is None and hom_wp > config.tau_threshold:
            tau_wp = t
        if longrun and out[_kernel.OUT_ABSORBED]:
            absorbed = True

    if not longrun:
        absorbed = is_absorbing(state, params)
    if not state.counts_consistent():
        raise RuntimeError("cached counts diverged from assignments")
    summary = RunSummary(
        final_n_a=state.num_a,
        stopping_step=steps,
        timesteps=timesteps_done,
        absorbed=bool(absorbed),
        tau_hh=tau_hh,
        tau_wp=tau_wp,
        final_homophily_hh=hom_hh,
        final_homophily_wp=hom_wp,
        component_sizes=tuple(components(state)),
        min_wp_size=int(out[_kernel.OUT_MIN_WP_SIZE]),
        size_overflow=overflow,
    )
    return rows, summary


_SUMMARY_FIELDS = (
    "rep", "seed", "final_n_a", "stopping_step", "timesteps", "absorbed",
    "tau_hh", "tau_wp", "final_homophily_hh", "final_homophily_wp",
    "min_wp_size", "size_overflow", "n_components", "component_sizes",
)


def _summary_row(config: SweepConfig, beta_idx, q_idx, rep, summary: RunSummary) -> dict:
    return {
        "rep": rep,
        "seed": config.run_seed(beta_idx, q_idx, rep),
        "final_n_a": summary.final_n_a,
        "stopping_step": summary.stopping_step,
        "timesteps": summary.timesteps,
        "absorbed": int(summary.absorbed),
        "tau_hh": "" if summary.tau_hh is None else summary.tau_hh,
        "tau_wp": "" if summary.tau_wp is None else summary.tau_wp,
        "final_homophily_hh": repr(summary.final_homophily_hh),
        "final_homophily_wp": repr(summary.final_homophily_wp),
        "min_wp_size": summary.min_wp_size,
        "size_overflow": int(summary.size_overflow),
        "n_components": len(summary.component_sizes),
        "component_sizes": " ".join(str(s) for s in summary.component_sizes),
    }


def summary_from_row(row: dict) -> RunSummary:
    comp = tuple(int(s) for s in row["component_sizes"].split()) if row["component_sizes"] else ()
    return RunSummary(
        final_n_a=int(row["final_n_a"]),
        stopping_step=int(row["stopping_step"]),
        timesteps=int(row["timesteps"]),
        absorbed=bool(int(row["absorbed"])),
        tau_hh=None if row["tau_hh"] == "" else int(row["tau_hh"]),
        tau_wp=None if row["tau_wp"] == "" else int(row["tau_wp"]),
        final_homophily_hh=float(row["final_homophily_hh"]),
        final_homophily_wp=float(row["final_homophily_wp"]),
        component_sizes=comp,
        min_wp_size=int(row["min_wp_size"]),
        size_overflow=bool(int(row["size_overflow"])),
    )


def _block_bytes(config: SweepConfig) -> int:
    return config.records_per_run * config.stat_width * 4 + 4


def _execute(args):
    config, beta_idx, q_idx, rep = args
    rows, summary = run_trajectory(config, beta_idx, q_idx, rep)
    payload = rows.astype("<i4").tobytes() if rows is not None else None
    return beta_idx, q_idx, rep, payload, _summary_row(config, beta_idx, q_idx, rep, summary)


def _config_to_json(config: SweepConfig) -> dict:
    d = asdict(config)
    d["betas"] = list(config.betas)
    d["qs"] = list(config.qs)
    d.pop("workers")  # execution knob, not dataset content
    return d


def config_from_json(d: dict) -> SweepConfig:
    d = dict(d)
    d["betas"] = tuple(d["betas"])
    d["qs"] = tuple(d["qs"])
    d.setdefault("workers", 1)
    return SweepConfig(**d)


def _same_content_config(a: SweepConfig, b: SweepConfig) -> bool:
    da, db = asdict(a), asdict(b)
    da.pop("workers")
    db.pop("workers")
    return da == db


def run_sweep(config: SweepConfig, out_dir) -> Path:
    """Execute every (cell, rep) of the campaign and write the dataset.

    Idempotent: a directory whose manifest matches the config is left alone;
    an interrupted sweep (``.progress.jsonl`` present) resumes with only the
    missing runs.
    """
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    progress_path = out / ".progress.jsonl"
    cells_dir = out / "cells"
    if manifest_path.exists() and not progress_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("complete") and _same_content_config(
            config_from_json(manifest["config"]), config
        ):
            return out
        raise DatasetError(f"{out} already holds a different or incomplete dataset")
    cells_dir.mkdir(parents=True, exist_ok=True)

    done: dict = {}
    if progress_path.exists():
        with progress_path.open() as fh:
            for line in fh:
                entry = json.loads(line)
                done[(entry["beta_idx"], entry["q_idx"], entry["rep"])] = entry["summary"]

    block = _block_bytes(config)
    if config.mode == DATASET_MODE:
        for bi, qi in config.cells():
            path = cells_dir / f"{config.cell_key(bi, qi)}.bin"
            if not path.exists() or path.stat().st_size != block * config.reps:
                with path.open("a+b") as fh:
                    fh.truncate(block * config.reps)

    work = [
        (config, bi, qi, rep)
        for bi, qi in config.cells()
        for rep in range(config.reps)
        if (bi, qi, rep) not in done
    ]

    def consume(result, progress_fh):
        bi, qi, rep, payload, summary = result
        if payload is not None:
            path = cells_dir / f"{config.cell_key(bi, qi)}.bin"
            with path.open("r+b") as fh:
                fh.seek(rep * block)
                fh.write(payload)
                fh.write(zlib.crc32(payload).to_bytes(4, "little"))
        progress_fh.write(json.dumps(
            {"beta_idx": bi, "q_idx": qi, "rep": rep, "summary": summary}
        ) + "\n")
        progress_fh.flush()
        done[(bi, qi, rep)] = summary

    with progress_path.open("a") as progress_fh:
        if config.workers > 1 and work:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                for result in pool.map(_execute, work, chunksize=4):
                    consume(result, progress_fh)
        else:
            for item in work:
                consume(_execute(item), progress_fh)

    for bi, qi in config.cells():
        path = cells_dir / f"{config.cell_key(bi, qi)}.summaries.csv"
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_SUMMARY_FIELDS)
            writer.writeheader()
            for rep in range(config.reps):
                writer.writerow(done[(bi, qi, rep)])

    manifest = {
        "format_version": FORMAT_VERSION,
        "complete": True,
        "seed_scheme": SEED_SCHEME,
        "stat_width": config.stat_width,
        "block_bytes": block,
        "config": _config_to_json(config),
        "cells": [
            {
                "key": config.cell_key(bi, qi),
                "beta_idx": bi,
                "q_idx": qi,
                "beta": config.betas[bi],
                "q": config.qs[qi],
            }
            for bi, qi in config.cells()
        ],
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    progress_path.unlink()
    return out


class TrajectoryDataset:
    """Read view of a sweep output directory with (cell, rep, t) access."""

    def __init__(self, path):
        self.path = Path(path)
        manifest_path = self.path / "manifest.json"
        if not manifest_path.exists():
            raise DatasetError(f"no manifest at {manifest_path}")
        self.manifest = json.loads(manifest_path.read_text())
        version = self.manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise DatasetVersionError(
                f"dataset format {version}, reader supports {FORMAT_VERSION}"
            )
        if not self.manifest.get("complete"):
            raise DatasetError("dataset manifest is not marked complete")
        self.config = config_from_json(self.manifest["config"])
        self._cells = {c["key"]: c for c in self.manifest["cells"]}

    def cell_keys(self) -> list:
        return list(self._cells)

    def cell_info(self, key: str) -> dict:
        return self._cells[key]

    def _validate_rows(self, rows: np.ndarray, key: str, rep: int) -> None:
        cfg = self.config
        hb = cfg.household_size + 1
        num_h = cfg.n // cfg.household_size
        d_hh = rows[:, 1 : 1 + hb]
        d_wp = rows[:, 1 + hb : 1 + hb + D_WP_BINS]
        s_wp = rows[:, 1 + hb + D_WP_BINS : 1 + hb + D_WP_BINS + S_WP_BINS]
        ks = np.arange(hb, dtype=np.int64)
        ok = (
            (d_hh.sum(axis=1) == num_h).all()
            and (d_wp.sum(axis=1) == cfg.num_workplaces).all()
            and (s_wp.sum(axis=1) == cfg.num_workplaces).all()
            and ((d_hh * ks).sum(axis=1) == rows[:, 0]).all()
        )
        if not ok:
            raise DatasetValidationError(f"invariant violation in {key} rep {rep}")

    def stats(self, key: str, rep: int, t_max: int | None = None) -> np.ndarray:
        """Statistics block of one run as an int32 array of shape (T, width);
        ``t_max`` returns the prefix of the first t_max records."""
        cfg = self.config
        if cfg.mode != DATASET_MODE:
            raise DatasetError("long-run datasets store summaries only")
        if not (0 <= rep < cfg.reps):
            raise DatasetError(f"rep {rep} out of range")
        block = self.manifest["block_bytes"]
        path = self.path / "cells" / f"{key}.bin"
        with path.open("rb") as fh:
            fh.seek(rep * block)
            raw = fh.read(block)
        payload, crc = raw[:-4], raw[-4:]
        if zlib.crc32(payload) != int.from_bytes(crc, "little"):
            raise DatasetChecksumError(f"checksum mismatch in {key} rep {rep}")
        rows = np.frombuffer(payload, dtype="<i4").reshape(
            cfg.records_per_run, cfg.stat_width
        )
        self._validate_rows(rows, key, rep)
        if t_max is not None:
            rows = rows[:t_max]
        return rows.copy()

    def cell_stats(self, key: str, t_max: int | None = None) -> np.ndarray:
        """All reps of a cell, shape (reps, T, width)."""
        return np.stack([self.stats(key, rep, t_max) for rep in range(self.config.reps)])

    def summaries(self, key: str) -> list:
        path = self.path / "cells" / f"{key}.summaries.csv"
        with path.open(newline="") as fh:
            return [summary_from_row(row) for row in csv.DictReader(fh)]


def read_dataset(path) -> TrajectoryDataset:
    return TrajectoryDataset(path)


CSV_COLUMNS_DOC = (
    "regime,beta,q,rep,t,N_A,D_hh_0..D_hh_<hs>,D_wp_1..D_wp_10,"
    "S_wp_1..S_wp_14,M_wp,N_ch"
)


def export_csv(dataset: TrajectoryDataset, out_path) -> Path:
    """Lossless delimiter-separated export of a dataset-mode campaign.

    One row per (cell, rep, t); integers only.  This is the interchange
    format consumed by external estimators.
    """
    cfg = dataset.config
    if cfg.mode != DATASET_MODE:
        raise DatasetError("export_csv requires a dataset-mode campaign")
    out_path = Path(out_path)
    hb = cfg.household_size + 1
    header = (
        ["regime", "beta", "q", "rep", "t", "N_A"]
        + [f"D_hh_{k}" for k in range(hb)]
        + [f"D_wp_{k}" for k in range(1, D_WP_BINS + 1)]
        + [f"S_wp_{k}" for k in range(1, S_WP_BINS + 1)]
        + ["M_wp", "N_ch"]
    )
    t0 = 0 if cfg.include_t0 else 1
    opener = __import__("gzip").open if out_path.suffix == ".gz" else open
    with opener(out_path, "wt", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for key in dataset.cell_keys():
            info = dataset.cell_info(key)
            prefix = f"{cfg.regime},{info['beta']},{info['q']}"
            for rep in range(cfg.reps):
                rows = dataset.stats(key, rep)
                lines = []
                for i in range(rows.shape[0]):
                    vals = ",".join(str(int(x)) for x in rows[i])
                    lines.append(f"{prefix},{rep},{t0 + i},{vals}")
                fh.write("\n".join(lines) + "\n")
    return out_path
