"""Evaluation metrics (MAE, RMSE, R²), improving rates and table rendering."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass
class PredictionSet:
    """Observed vs predicted flows over the evaluation bins of one producer."""

    target_bins: np.ndarray
    observed: np.ndarray  # (T, N)
    predicted: np.ndarray  # (T, N)
    producer: str
    horizon_minutes: int

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        if self.observed.shape != self.predicted.shape:
            raise ConfigurationError("observed and predicted shapes differ")


@dataclass
class MetricRow:
    mode: str
    horizon_minutes: int
    producer: str
    mae: float
    rmse: float
    r2: Optional[float]  # None when SS_tot == 0
    n_stations: int
    n_targets: int
    improving_rate_vs: Optional[str] = None
    improving_rate_pct: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        row = {
            "mode": self.mode,
            "horizon_minutes": self.horizon_minutes,
            "producer": self.producer,
            "mae": self.mae,
            "rmse": self.rmse,
            "r2": self.r2,
            "n_stations": self.n_stations,
            "n_targets": self.n_targets,
            "improving_rate_vs": self.improving_rate_vs,
            "improving_rate_pct": self.improving_rate_pct,
        }
        row.update(self.extra)
        return row


def compute_metrics(pred: PredictionSet):
    """MAE, RMSE and R² over all stations and intervals.

    R² uses the grand mean of the observations; it is None when every
    observation is identical (SS_tot = 0).
    """
    y, yhat = pred.observed, pred.predicted
    if y.size == 0:
        raise DataError("empty prediction set")
    err = y - yhat
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return mae, rmse, r2


def improving_rate(base_mae: float, variant_mae: float) -> float:
    """Percent MAE reduction relative to the base model."""
    if base_mae <= 0:
        raise DataError("base MAE must be positive")
    return 100.0 * (base_mae - variant_mae) / base_mae


def metric_row(pred: PredictionSet, mode: str, base_mae: Optional[float] = None, base_name: str = "Base") -> MetricRow:
    mae, rmse, r2 = compute_metrics(pred)
    row = MetricRow(
        mode=mode,
        horizon_minutes=pred.horizon_minutes,
        producer=pred.producer,
        mae=mae,
        rmse=rmse,
        r2=r2,
        n_stations=pred.observed.shape[1],
        n_targets=pred.observed.shape[0],
    )
    if base_mae is not None and pred.producer != base_name:
        row.improving_rate_vs = base_name
        row.improving_rate_pct = improving_rate(base_mae, mae)
    return row


TRANSFER_PRODUCERS = ("Base", "FT", "FTF", "SB")


def _fmt(x, nd=3):
    if x is None:
        return "n/a"
    return f"{x:.{nd}f}"


def render_transfer_table(rows: Sequence[MetricRow]) -> str:
    """Per-mode blocks: one row per horizon, Base MAE then each strategy's
    MAE and improving rate."""
    rows = [r for r in rows if r.producer in TRANSFER_PRODUCERS]
    if not rows:
        raise DataError("no transfer rows to render")
    lines = []
    for mode in sorted({r.mode for r in rows}):
        block = [r for r in rows if r.mode == mode]
        producers = [p for p in TRANSFER_PRODUCERS if any(r.producer == p for r in block)]
        header = ["Period", "Base MAE"]
        for p in producers:
            if p != "Base":
                header += [f"{p} MAE", f"{p} impr."]
        lines.append(f"-- {mode} --")
        lines.append("\t".join(header))
        for horizon in sorted({r.horizon_minutes for r in block}):
            cells = [f"{horizon}min"]
            by_producer = {r.producer: r for r in block if r.horizon_minutes == horizon}
            base = by_producer.get("Base")
            cells.append(_fmt(base.mae if base else None))
            for p in producers:
                if p == "Base":
                    continue
                r = by_producer.get(p)
                cells.append(_fmt(r.mae if r else None))
                pct = r.improving_rate_pct if r else None
                cells.append("n/a" if pct is None else f"{pct:.1f}%")
            lines.append("\t".join(cells))
        lines.append("")
    return "\n".join(lines)


def render_baseline_table(rows: Sequence[MetricRow]) -> str:
    """Per-mode blocks: one row per model, (MAE, RMSE, R²) per horizon."""
    rows = list(rows)
    if not rows:
        raise DataError("no rows to render")
    lines = []
    for mode in sorted({r.mode for r in rows}):
        block = [r for r in rows if r.mode == mode]
        horizons = sorted({r.horizon_minutes for r in block})
        header = ["Model"]
        for hz in horizons:
            header += [f"{hz}min MAE", "RMSE", "R2"]
        lines.append(f"-- {mode} --")
        lines.append("\t".join(header))
        for producer in sorted({r.producer for r in block}):
            cells = [producer]
            for hz in horizons:
                match = [r for r in block if r.producer == producer and r.horizon_minutes == hz]
                if match:
                    r = match[0]
                    cells += [_fmt(r.mae), _fmt(r.rmse), _fmt(r.r2)]
                else:
                    cells += ["n/a", "n/a", "n/a"]
            lines.append("\t".join(cells))
        lines.append("")
    return "\n".join(lines)


def render_report(rows: Sequence[MetricRow], seed: Optional[int] = None, config_hash: Optional[str] = None):
    """Render all table artifacts; returns {"text", "json", "csv"} strings."""
    rows = list(rows)
    if not rows:
        raise DataError("cannot render an empty report")
    rows = sorted(rows, key=lambda r: (r.mode, r.horizon_minutes, r.producer))
    json_rows = []
    for r in rows:
        jr = r.to_json()
        jr["seed"] = seed
        jr["config_hash"] = config_hash
        json_rows.append(jr)
    json_text = json.dumps(json_rows, indent=2, sort_keys=True) + "\n"

    buf = io.StringIO()
    fields = sorted({k for jr in json_rows for k in jr})
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for jr in json_rows:
        writer.writerow(jr)
    csv_text = buf.getvalue()

    parts = []
    transfer_rows = [r for r in rows if r.producer in TRANSFER_PRODUCERS]
    other_rows = rows
    if transfer_rows:
        parts.append("Transfer strategies")
        parts.append(render_transfer_table(transfer_rows))
    parts.append("All models")
    parts.append(render_baseline_table(other_rows))
    text = "\n".join(parts)
    return {"text": text, "json": json_text, "csv": csv_text}
