"""End-to-end experiment runner: prepare -> train -> transfer -> evaluate -> report.

Every stage seed is derived from the master seed and a stage label, so a
config file plus its master seed reproduces each report byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines as bl
from . import flowdata as fd
from . import metrics as mt
from . import netcore as nc
from . import synthgen as sg
from . import transfer as tf
from .errors import ConfigurationError, CrossflowError

HORIZONS = (15, 30, 45, 60)


def derive_seed(master: int, *labels) -> int:
    """Deterministic 63-bit child seed from the master seed and stage labels."""
    text = ":".join([str(master)] + [str(l) for l in labels])
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment; see README for the schema."""

    seed: int
    horizons: tuple = HORIZONS
    L: int = 4
    hidden_layers: tuple = (100, 100, 100)
    epochs: int = 200
    batch_size: int = 150
    learning_rate: float = 1e-3
    ft_epochs: Optional[int] = None  # override for fine-tuning runs
    strategies: tuple = ("Base", "FT", "FTF", "SB")
    baselines: tuple = ("OneStep", "HA", "VAR", "RF")
    filter_threshold: float = 0.1
    target_train_limit_days: Optional[float] = None
    synth: Optional[dict] = None  # SynthConfig overrides
    trips: Optional[dict] = None  # {"source": {...}, "target": {...}, "time_range": [...]}
    rf: dict = field(default_factory=dict)
    var_order: int = 4
    var_ridge: float = 1e-3
    out_dir: str = "out"

    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if "seed" not in data:
            raise ConfigurationError("experiment config requires a seed")
        known = {f for f in cls.__dataclass_fields__ if f != "raw"}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in data.items()}, raw=dict(data))
        cfg.horizons = tuple(int(h) for h in cfg.horizons)
        cfg.hidden_layers = tuple(int(h) for h in cfg.hidden_layers)
        cfg.strategies = tuple(cfg.strategies)
        cfg.baselines = tuple(cfg.baselines)
        if not cfg.horizons:
            raise ConfigurationError("at least one horizon required")
        if any(h not in HORIZONS for h in cfg.horizons):
            raise ConfigurationError(f"horizons must be a subset of {HORIZONS}")
        if not cfg.strategies and not cfg.baselines:
            raise ConfigurationError("nothing to run: no strategies, no baselines")
        bad = [s for s in cfg.strategies if s not in ("Base", "FT", "FTF", "SB")]
        if bad:
            raise ConfigurationError(f"unknown strategies: {bad}")
        if (cfg.synth is None) == (cfg.trips is None):
            raise ConfigurationError("config needs exactly one of 'synth' or 'trips'")
        if cfg.trips is not None:
            for side in ("source", "target"):
                spec = cfg.trips.get(side) or {}
                for key in ("trips_csv", "stations_csv"):
                    path = spec.get(key)
                    if not path or not Path(path).exists():
                        raise ConfigurationError(f"trips.{side}.{key} missing or not found: {path}")
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def canonical(self) -> dict:
        if self.raw:
            return dict(self.raw)
        data = {
            f: getattr(self, f)
            for f in self.__dataclass_fields__
            if f not in ("raw",) and getattr(self, f) is not None
        }
        for key in ("horizons", "hidden_layers", "strategies", "baselines"):
            data[key] = list(data[key])
        return data


def _materialize_flows(config: ExperimentConfig, horizon: int):
    """Build (source, target) flow matrices for one horizon."""
    if config.synth is not None:
        overrides = dict(config.synth)
        overrides.setdefault("seed", config.seed)
        overrides["interval_minutes"] = horizon
        if "source_peaks" in overrides:
            overrides["source_peaks"] = sg.PeakProfile(**overrides["source_peaks"])
        if "target_peaks" in overrides:
            overrides["target_peaks"] = sg.PeakProfile(**overrides["target_peaks"])
        synth_cfg = sg.SynthConfig(**overrides)
        source, target, _ = sg.generate_multimodal(synth_cfg)
        return source, target
    trips_cfg = config.trips
    t0 = fd.parse_timestamp(trips_cfg["time_range"][0])
    t1 = fd.parse_timestamp(trips_cfg["time_range"][1])
    flows = []
    for side in ("source", "target"):
        spec = trips_cfg[side]
        with open(spec["trips_csv"]) as fh:
            trips, _ = fd.parse_trips(fh)
        stations = fd.read_stations_csv(spec["stations_csv"])
        flows.append(
            fd.bin_flows(
                trips,
                stations,
                interval_minutes=horizon,
                time_range=(t0, t1),
                direction=spec.get("direction", "arrivals"),
                snap_radius_m=spec.get("snap_radius_m", 500.0),
            )
        )
    return flows[0], flows[1]


def _limit_train_windows(windows: fd.WindowSet, limit_bin: int) -> fd.WindowSet:
    keep = windows.target_bins < limit_bin
    return fd.WindowSet(L=windows.L, X=windows.X[keep], y=windows.y[keep], target_bins=windows.target_bins[keep])


def _limited_split(split: fd.DatasetSplit, limit_bin: int) -> fd.DatasetSplit:
    """Shrink the train range to the data-availability limit; the freed bins
    join the validation range so the partition invariant holds."""
    b1 = min(split.train_range[1], limit_bin)
    return fd.DatasetSplit((0, b1), (b1, split.val_range[1]), split.test_range)


def _train_cfg(config: ExperimentConfig, seed: int, epochs: Optional[int] = None) -> nc.TrainConfig:
    return nc.TrainConfig(
        epochs=config.epochs if epochs is None else epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        seed=seed,
    )


def run_horizon(config: ExperimentConfig, horizon: int):
    """All strategies and baselines for one horizon.

    Returns (metric rows for the target mode, audit dict).
    """
    source_flow, target_flow = _materialize_flows(config, horizon)
    source_flow = fd.filter_stations(source_flow, config.filter_threshold)
    target_flow = fd.filter_stations(target_flow, config.filter_threshold)

    s_split, s_train, s_val, _ = fd.split_and_window(source_flow, L=config.L)
    t_split, t_train, t_val, t_test = fd.split_and_window(target_flow, L=config.L)

    limit_bin = t_split.train_range[1]
    if config.target_train_limit_days is not None:
        limit_bin = int(config.target_train_limit_days * 24 * 60 // horizon)
        t_train = _limit_train_windows(t_train, limit_bin)
        if len(t_train) == 0:
            raise ConfigurationError("target_train_limit_days leaves no training windows")
        t_split_eff = _limited_split(t_split, limit_bin)
    else:
        t_split_eff = t_split

    s_norm = fd.fit_normalizer(source_flow, s_split)
    t_norm = fd.fit_normalizer(target_flow, t_split_eff)

    rows = []
    audit = {"horizon": horizon, "plans": {}, "target_mode": target_flow.mode}

    source_params = None
    source_spec = None
    needs_source = any(s in config.strategies for s in ("FT", "FTF"))
    if needs_source:
        source_spec = nc.NetSpec(
            input_dim=source_flow.n_stations,
            output_dim=source_flow.n_stations,
            hidden_layers=config.hidden_layers,
            seq_len=config.L,
        )
        cfg = _train_cfg(config, derive_seed(config.seed, "source", horizon))
        source_params, _ = nc.train(source_spec, s_train, s_val, s_norm, cfg)

    target_spec = nc.NetSpec(
        input_dim=target_flow.n_stations,
        output_dim=target_flow.n_stations,
        hidden_layers=config.hidden_layers,
        seq_len=config.L,
    )

    base_mae = None
    strategy_rows = []
    for name in ("Base", "FT", "FTF", "SB"):
        if name not in config.strategies:
            continue
        strategy = tf.Strategy(name)
        seed = derive_seed(config.seed, "target", name, horizon)
        epochs = config.ft_epochs if name in ("FT", "FTF") and config.ft_epochs is not None else None
        cfg = _train_cfg(config, seed, epochs)
        if strategy is tf.Strategy.SB:
            sb_split, sb_train, sb_val, sb_test = tf.build_sb_samples(source_flow, target_flow, L=config.L)
            sb_train = _limit_train_windows(sb_train, limit_bin)
            result = tf.train_with_strategy(
                strategy,
                nc.NetSpec(
                    input_dim=source_flow.n_stations,
                    output_dim=target_flow.n_stations,
                    hidden_layers=config.hidden_layers,
                    seq_len=config.L,
                ),
                sb_train,
                sb_val,
                (s_norm, t_norm),
                cfg,
            )
            predicted = nc.predict(result.params, sb_test, (s_norm, t_norm))
            pred = mt.PredictionSet(sb_test.target_bins, sb_test.y, predicted, "SB", horizon)
        else:
            result = tf.train_with_strategy(
                strategy,
                target_spec,
                t_train,
                t_val,
                t_norm,
                cfg,
                source_params=source_params,
                source_spec=source_spec,
            )
            predicted = nc.predict(result.params, t_test, t_norm)
            pred = mt.PredictionSet(t_test.target_bins, t_test.y, predicted, name, horizon)
        audit["plans"][name] = result.plan.to_json()
        mae, _, _ = mt.compute_metrics(pred)
        if name == "Base":
            base_mae = mae
        strategy_rows.append(pred)

    for pred in strategy_rows:
        rows.append(mt.metric_row(pred, target_flow.mode, base_mae=base_mae))

    if "OneStep" in config.baselines:
        rows.append(mt.metric_row(bl.one_step(target_flow, t_split_eff), target_flow.mode, base_mae=base_mae))
    if "HA" in config.baselines:
        rows.append(mt.metric_row(bl.historical_average(target_flow, t_split_eff), target_flow.mode, base_mae=base_mae))
    if "VAR" in config.baselines:
        model = bl.var_fit(target_flow, t_split_eff, p=config.var_order, ridge=config.var_ridge)
        rows.append(mt.metric_row(bl.var_predict(model, target_flow, t_split_eff), target_flow.mode, base_mae=base_mae))
    if "RF" in config.baselines:
        rf_cfg = bl.RFConfig(seed=derive_seed(config.seed, "rf", horizon), **config.rf)
        forest = bl.rf_fit(t_train, rf_cfg)
        rows.append(
            mt.metric_row(
                bl.rf_prediction_set(forest, t_test, horizon), target_flow.mode, base_mae=base_mae
            )
        )
    return rows, audit


def run(config: ExperimentConfig, out_dir=None) -> dict:
    """Run the full experiment and write report + manifest files.

    Returns {"rows": [...], "report": {...}, "manifest": {...}}.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(config.canonical())
    all_rows = []
    audits = []
    try:
        for horizon in config.horizons:
            rows, audit = run_horizon(config, horizon)
            all_rows.extend(rows)
            audits.append(audit)
    except CrossflowError:
        for name in ("report.json", "report.csv", "report.txt", "manifest.json"):
            (out / name).unlink(missing_ok=True)
        raise
    report = mt.render_report(all_rows, seed=config.seed, config_hash=chash)
    manifest = {
        "config": config.canonical(),
        "config_hash": chash,
        "master_seed": config.seed,
        "stages": audits,
        "kernel_backend": nc.BACKEND,
    }
    (out / "report.json").write_text(report["json"])
    (out / "report.csv").write_text(report["csv"])
    (out / "report.txt").write_text(report["text"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"rows": all_rows, "report": report, "manifest": manifest}


@dataclass
class GridPoint:
    hidden_layers: tuple
    L: int
    val_mae: float
    n_params: int
    selected: bool = False


def grid_search(
    train_windows,
    val_windows,
    normalizer,
    input_dim: int,
    output_dim: int,
    layer_grid: Sequence[int],
    unit_grid: Sequence[int],
    L_grid: Optional[Sequence[int]] = None,
    base_config: Optional[nc.TrainConfig] = None,
    seed: int = 0,
    window_builder=None,
):
    """Exhaustive search over depth x units (x input length L).

    Minimal validation MAE wins; ties break toward fewer parameters.  When
    L varies, `window_builder(L) -> (train, val)` must regenerate windows.
    Returns (best NetSpec, list of GridPoint).
    """
    if not layer_grid or not unit_grid:
        raise ConfigurationError("empty hyperparameter grid")
    if len(val_windows) == 0:
        raise ConfigurationError("validation segment is empty")
    Ls = list(L_grid) if L_grid else [train_windows.L]
    base = base_config or nc.TrainConfig(epochs=20, seed=seed)
    points = []
    for L in Ls:
        if L != train_windows.L:
            if window_builder is None:
                raise ConfigurationError("varying L requires a window_builder")
            tr, va = window_builder(L)
        else:
            tr, va = train_windows, val_windows
        for depth in layer_grid:
            for units in unit_grid:
                spec = nc.NetSpec(
                    input_dim=input_dim,
                    output_dim=output_dim,
                    hidden_layers=(units,) * depth,
                    seq_len=L,
                )
                cfg = nc.TrainConfig(
                    epochs=base.epochs,
                    batch_size=base.batch_size,
                    learning_rate=base.learning_rate,
                    seed=derive_seed(seed, "grid", depth, units, L),
                )
                params, _ = nc.train(spec, tr, va, normalizer, cfg)
                predicted = nc.predict(params, va, normalizer, clamp_nonnegative=False)
                val_mae = float(np.mean(np.abs(predicted - va.y)))
                points.append(GridPoint((units,) * depth, L, val_mae, params.n_params()))
    best = min(points, key=lambda p: (p.val_mae, p.n_params))
    best.selected = True
    best_spec = nc.NetSpec(
        input_dim=input_dim, output_dim=output_dim, hidden_layers=best.hidden_layers, seq_len=best.L
    )
    return best_spec, points
