"""Command-line interface.

Subcommands: prepare, synth, train, transfer, evaluate, report, gridsearch,
gradcheck, run.  Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import baselines as bl
from . import flowdata as fd
from . import metrics as mt
from . import netcore as nc
from . import runner
from . import synthgen as sg
from . import transfer as tf
from .errors import ConfigurationError, CrossflowError


def _ints(text: str):
    return tuple(int(x) for x in text.split(",") if x)


def _train_config(args, seed) -> nc.TrainConfig:
    return nc.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=seed,
    )


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, required=True, help="master seed (mandatory for training)")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=150)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--L", type=int, default=4, help="input horizon count")


def cmd_prepare(args) -> int:
    stations = fd.read_stations_csv(args.stations)
    trips_path = Path(args.trips)
    if not trips_path.exists():
        raise ConfigurationError(f"trip file not found: {trips_path}")
    with open(trips_path) as fh:
        trips, stats = fd.parse_trips(fh)
    flow = fd.bin_flows(
        trips,
        stations,
        interval_minutes=args.interval,
        time_range=(fd.parse_timestamp(args.start), fd.parse_timestamp(args.end)),
        direction=args.direction,
        snap_radius_m=args.snap_radius,
    )
    if args.filter_threshold is not None:
        flow = fd.filter_stations(flow, args.filter_threshold)
    fd.write_flow_csv(flow, args.out)
    print(
        f"wrote {args.out}: {flow.n_bins} bins x {flow.n_stations} stations "
        f"({stats.accepted} trips parsed, {stats.rejected} rejected)"
    )
    return 0


def cmd_synth(args) -> int:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    for key, val in (
        ("days", args.days),
        ("interval_minutes", args.interval),
        ("source_stations", args.source_stations),
        ("target_stations", args.target_stations),
        ("base_rate", args.rate),
        ("coupling", args.coupling),
        ("seed", args.seed),
    ):
        if val is not None:
            overrides[key] = val
    if "source_peaks" in overrides:
        overrides["source_peaks"] = sg.PeakProfile(**overrides["source_peaks"])
    if "target_peaks" in overrides:
        overrides["target_peaks"] = sg.PeakProfile(**overrides["target_peaks"])
    config = sg.SynthConfig(**overrides)
    source, target, truth = sg.generate_multimodal(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fd.write_flow_csv(source, out / "source_flow.csv")
    fd.write_flow_csv(target, out / "target_flow.csv")
    sg.write_truth_json(truth, out / "truth.json")
    print(f"wrote synthetic flows to {out} (coupling={config.coupling}, seed={config.seed})")
    return 0


def cmd_train(args) -> int:
    flow = fd.read_flow_csv(args.flow)
    split, train_ws, val_ws, _ = fd.split_and_window(flow, L=args.L)
    norm = fd.fit_normalizer(flow, split)
    spec = nc.NetSpec(
        input_dim=flow.n_stations,
        output_dim=flow.n_stations,
        hidden_layers=_ints(args.hidden),
        seq_len=args.L,
    )
    params, trace = nc.train(spec, train_ws, val_ws, norm, _train_config(args, args.seed))
    nc.save_checkpoint(args.out, spec, params, norm)
    final_val = trace.val_loss[-1] if trace.val_loss else float("nan")
    print(f"wrote {args.out} (final val MAE {final_val:.4f} normalized)")
    return 0


def cmd_transfer(args) -> int:
    target_flow = fd.read_flow_csv(args.flow)
    split, train_ws, val_ws, _ = fd.split_and_window(target_flow, L=args.L)
    t_norm = fd.fit_normalizer(target_flow, split)
    strategy = tf.Strategy(args.strategy)
    cfg = _train_config(args, args.seed)
    if strategy is tf.Strategy.SB:
        if not args.source_flow:
            raise ConfigurationError("SB requires --source-flow")
        source_flow = fd.read_flow_csv(args.source_flow)
        s_split, _, _, _ = fd.split_and_window(source_flow, L=args.L)
        s_norm = fd.fit_normalizer(source_flow, s_split)
        _, sb_train, sb_val, _ = tf.build_sb_samples(source_flow, target_flow, L=args.L)
        spec = nc.NetSpec(
            input_dim=source_flow.n_stations,
            output_dim=target_flow.n_stations,
            hidden_layers=_ints(args.hidden),
            seq_len=args.L,
        )
        result = tf.train_with_strategy(strategy, spec, sb_train, sb_val, (s_norm, t_norm), cfg)
        nc.save_checkpoint(args.out, spec, result.params, (s_norm, t_norm))
    else:
        if not args.source_ckpt:
            raise ConfigurationError(f"{strategy.value} requires --source-ckpt")
        source_spec, source_params, _ = nc.load_checkpoint(args.source_ckpt)
        spec = nc.NetSpec(
            input_dim=target_flow.n_stations,
            output_dim=target_flow.n_stations,
            hidden_layers=source_spec.hidden_layers,
            seq_len=args.L,
        )
        result = tf.train_with_strategy(
            strategy, spec, train_ws, val_ws, t_norm, cfg,
            source_params=source_params, source_spec=source_spec,
        )
        nc.save_checkpoint(args.out, spec, result.params, t_norm)
    print(f"wrote {args.out} ({strategy.value}; plan: {result.plan.to_json()})")
    return 0


def cmd_evaluate(args) -> int:
    flow = fd.read_flow_csv(args.flow)
    rows = []
    base_mae = None
    L = args.L
    if args.ckpt:
        for i, path in enumerate(args.ckpt):
            spec, params, norms = nc.load_checkpoint(path)
            L = spec.seq_len
            split, _, _, test_ws = fd.split_and_window(flow, L=L)
            label = args.label[i] if args.label and i < len(args.label) else Path(path).stem
            if spec.input_dim != flow.n_stations:
                if not args.source_flow:
                    raise ConfigurationError(
                        f"{path} expects {spec.input_dim} input stations; pass --source-flow for SB models"
                    )
                source_flow = fd.read_flow_csv(args.source_flow)
                _, _, _, sb_test = tf.build_sb_samples(source_flow, flow, L=L)
                predicted = nc.predict(params, sb_test, norms)
                pred = mt.PredictionSet(sb_test.target_bins, sb_test.y, predicted, label, flow.interval_minutes)
            else:
                predicted = nc.predict(params, test_ws, norms)
                pred = mt.PredictionSet(test_ws.target_bins, test_ws.y, predicted, label, flow.interval_minutes)
            if base_mae is None and label == "Base":
                base_mae, _, _ = mt.compute_metrics(pred)
            rows.append(mt.metric_row(pred, flow.mode, base_mae=base_mae))
    split, train_ws, _, test_ws = fd.split_and_window(flow, L=L)
    for name in _strs(args.baselines):
        if name == "OneStep":
            rows.append(mt.metric_row(bl.one_step(flow, split), flow.mode, base_mae=base_mae))
        elif name == "HA":
            rows.append(mt.metric_row(bl.historical_average(flow, split), flow.mode, base_mae=base_mae))
        elif name == "VAR":
            model = bl.var_fit(flow, split)
            rows.append(mt.metric_row(bl.var_predict(model, flow, split), flow.mode, base_mae=base_mae))
        elif name == "RF":
            forest = bl.rf_fit(train_ws, bl.RFConfig(seed=args.seed or 0))
            rows.append(
                mt.metric_row(bl.rf_prediction_set(forest, test_ws, flow.interval_minutes), flow.mode, base_mae=base_mae)
            )
        else:
            raise ConfigurationError(f"unknown baseline: {name}")
    if not rows:
        raise ConfigurationError("nothing to evaluate: pass --ckpt and/or --baselines")
    payload = [r.to_json() for r in rows]
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _strs(text):
    if not text:
        return []
    return [s for s in text.split(",") if s]


def cmd_report(args) -> int:
    rows = []
    for path in args.rows:
        with open(path) as fh:
            for jr in json.load(fh):
                known = {
                    "mode", "horizon_minutes", "producer", "mae", "rmse", "r2",
                    "n_stations", "n_targets", "improving_rate_vs", "improving_rate_pct",
                }
                extra = {k: v for k, v in jr.items() if k not in known and k not in ("seed", "config_hash")}
                rows.append(mt.MetricRow(**{k: jr[k] for k in known if k in jr}, extra=extra))
    report = mt.render_report(rows, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report["json"])
    (out / "report.csv").write_text(report["csv"])
    (out / "report.txt").write_text(report["text"])
    print(report["text"])
    return 0


def cmd_gridsearch(args) -> int:
    flow = fd.read_flow_csv(args.flow)

    def build(L):
        _, tr, va, _ = fd.split_and_window(flow, L=L)
        return tr, va

    split, train_ws, val_ws, _ = fd.split_and_window(flow, L=args.L)
    norm = fd.fit_normalizer(flow, split)
    base = _train_config(args, args.seed)
    best_spec, points = runner.grid_search(
        train_ws,
        val_ws,
        norm,
        input_dim=flow.n_stations,
        output_dim=flow.n_stations,
        layer_grid=_ints(args.layers),
        unit_grid=_ints(args.units),
        L_grid=_ints(args.L_grid) if args.L_grid else None,
        base_config=base,
        seed=args.seed,
        window_builder=build,
    )
    table = [
        {
            "hidden_layers": list(p.hidden_layers),
            "L": p.L,
            "val_mae": p.val_mae,
            "n_params": p.n_params,
            "selected": p.selected,
        }
        for p in points
    ]
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
    for row in table:
        marker = " <- selected" if row["selected"] else ""
        print(f"layers={row['hidden_layers']} L={row['L']} val_mae={row['val_mae']:.4f} params={row['n_params']}{marker}")
    print(f"best: hidden={best_spec.hidden_layers} L={best_spec.seq_len}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for seed in range(args.seeds):
        spec = nc.NetSpec(
            input_dim=args.n_in,
            output_dim=args.n_out,
            hidden_layers=_ints(args.hidden),
            seq_len=args.L,
        )
        report = nc.gradient_check(spec, seed=seed, h=args.h)
        worst = max(worst, report.max_rel_err)
        print(f"seed {seed}: max rel err {report.max_rel_err:.3e} (block {report.worst_block})")
    print(f"overall max rel err {worst:.3e} ({'PASS' if worst < 1e-4 else 'FAIL'})")
    return 0 if worst < 1e-4 else 4


def cmd_run(args) -> int:
    config = runner.ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        data = config.canonical()
        data["seed"] = args.seed
        config = runner.ExperimentConfig.from_dict(data)
    result = runner.run(config, out_dir=args.out_dir)
    print(result["report"]["text"])
    out = Path(args.out_dir if args.out_dir is not None else config.out_dir)
    print(f"report written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="bin trip CSV into a flow matrix")
    p.add_argument("--trips", required=True)
    p.add_argument("--stations", required=True)
    p.add_argument("--interval", type=int, required=True, choices=(15, 30, 45, 60))
    p.add_argument("--start", required=True, help="RFC 3339 range start")
    p.add_argument("--end", required=True, help="RFC 3339 range end (exclusive)")
    p.add_argument("--direction", default="arrivals", choices=("arrivals", "departures"))
    p.add_argument("--snap-radius", type=float, default=500.0)
    p.add_argument("--filter-threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate coupled synthetic flows")
    p.add_argument("--config", help="JSON with generator settings")
    p.add_argument("--days", type=int)
    p.add_argument("--interval", type=int, choices=(15, 30, 45, 60))
    p.add_argument("--source-stations", type=int)
    p.add_argument("--target-stations", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--coupling", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a unimodal model on a flow matrix")
    p.add_argument("--flow", required=True)
    p.add_argument("--hidden", default="100,100,100")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="train a target model with FT/FTF/SB")
    p.add_argument("--strategy", required=True, choices=("FT", "FTF", "SB"))
    p.add_argument("--flow", required=True, help="target-mode flow matrix")
    p.add_argument("--source-ckpt", help="trained source checkpoint (FT/FTF)")
    p.add_argument("--source-flow", help="source-mode flow matrix (SB)")
    p.add_argument("--hidden", default="100,100,100", help="hidden layers (SB only)")
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="metrics for checkpoints and baselines")
    p.add_argument("--flow", required=True)
    p.add_argument("--ckpt", action="append", default=[])
    p.add_argument("--label", action="append", default=[])
    p.add_argument("--source-flow", help="source flow for SB checkpoints")
    p.add_argument("--baselines", default="", help="comma list: OneStep,HA,VAR,RF")
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render tables from metric rows")
    p.add_argument("--rows", action="append", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gridsearch", help="depth/units (and L) grid search")
    p.add_argument("--flow", required=True)
    p.add_argument("--layers", default="2,3")
    p.add_argument("--units", default="50,100")
    p.add_argument("--L-grid", dest="L_grid", default="")
    _add_train_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--n-in", type=int, default=3)
    p.add_argument("--n-out", type=int, default=3)
    p.add_argument("--hidden", default="5,5")
    p.add_argument("--L", type=int, default=2)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("run", help="full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CrossflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
