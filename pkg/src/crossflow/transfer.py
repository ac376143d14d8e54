"""Cross-modal transfer strategies: FT, FTF and split-brain (SB).

Only blocks whose shapes are independent of the station counts may be
moved between models, i.e. the recurrent layers above the first one.  The
first layer (its input weights depend on the input width) and the output
head stay mode-specific; layers are treated atomically, so the first
layer's recurrent weights are not moved either.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DataError, IncompatibleArchitecture
from .flowdata import FlowMatrix, WindowSet, make_split, windows_for_targets
from .netcore import ModelParams, NetSpec, TrainConfig, init_params, train


class Strategy(str, Enum):
    BASE = "Base"
    FT = "FT"
    FTF = "FTF"
    SB = "SB"


@dataclass(frozen=True)
class TransferPlan:
    strategy: Strategy
    transferable_blocks: frozenset = frozenset()
    freeze_mask: frozenset = frozenset()

    def __post_init__(self):
        if not self.freeze_mask <= self.transferable_blocks:
            raise ConfigurationError("freeze_mask must be a subset of transferable blocks")

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "transferred": sorted(self.transferable_blocks),
            "frozen": sorted(self.freeze_mask),
        }


def plan_transfer(source_spec: NetSpec, target_spec: NetSpec, strategy: Strategy) -> TransferPlan:
    """Which blocks move from source to target, and which stay frozen."""
    strategy = Strategy(strategy)
    if strategy not in (Strategy.FT, Strategy.FTF):
        raise ConfigurationError(f"plan_transfer applies to FT/FTF, not {strategy.value}")
    if source_spec.hidden_layers != target_spec.hidden_layers:
        raise IncompatibleArchitecture(
            f"hidden layers differ: {source_spec.hidden_layers} vs {target_spec.hidden_layers}"
        )
    blocks = frozenset(
        f"L{k}.{part}"
        for k in range(2, len(source_spec.hidden_layers) + 1)
        for part in ("W", "U", "b")
    )
    freeze = blocks if strategy is Strategy.FTF else frozenset()
    return TransferPlan(strategy=strategy, transferable_blocks=blocks, freeze_mask=freeze)


def apply_transfer(
    source_params: Optional[ModelParams],
    target_init: ModelParams,
    plan: TransferPlan,
) -> ModelParams:
    """Copy every transferable block bitwise; leave everything else alone."""
    result = target_init.copy()
    if plan.strategy is Strategy.BASE or not plan.transferable_blocks:
        return result
    if source_params is None:
        raise ConfigurationError(f"{plan.strategy.value} requires a trained source model")
    src = source_params.blocks()
    dst = result.blocks()
    for name in plan.transferable_blocks:
        if src[name].shape != dst[name].shape:
            raise AssertionError(f"transferable block {name} has mismatched shapes")
        dst[name][...] = src[name]
    return result


def build_sb_samples(source_flow: FlowMatrix, target_flow: FlowMatrix, L: int = 4):
    """Split-brain samples: source-mode history in, target-mode next bin out.

    The two matrices are aligned on bin timestamps; targets are windowed and
    split exactly like a unimodal dataset.

    Returns (DatasetSplit, train, val, test WindowSets) where each sample's
    X comes from the source matrix and y from the target matrix.
    """
    if source_flow.interval_minutes != target_flow.interval_minutes:
        raise DataError("interval mismatch between source and target flows")
    delta_s = (target_flow.origin_time - source_flow.origin_time).total_seconds()
    step_s = source_flow.interval_minutes * 60.0
    if delta_s % step_s != 0:
        raise DataError("flow matrices are not bin-aligned")
    shift = int(delta_s // step_s)
    # overlap in source bin indices
    lo = max(0, shift)
    hi = min(source_flow.n_bins, shift + target_flow.n_bins)
    if hi <= lo:
        raise DataError("source and target flows do not overlap in time")
    src_vals = source_flow.values[lo:hi].astype(np.float64)
    tgt_vals = target_flow.values[lo - shift : hi - shift].astype(np.float64)
    n_bins = hi - lo
    if n_bins < L + 3:
        raise DataError("overlap too short to window")
    split = make_split(n_bins)
    sets = []
    for (seg_lo, seg_hi) in (split.train_range, split.val_range, split.test_range):
        targets = np.arange(max(seg_lo, L), seg_hi, dtype=np.int64)
        ws = windows_for_targets(src_vals, targets, L)
        sets.append(WindowSet(L=L, X=ws.X, y=tgt_vals[targets], target_bins=targets))
    return split, sets[0], sets[1], sets[2]


@dataclass
class StrategyResult:
    strategy: Strategy
    params: ModelParams
    trace: object
    plan: TransferPlan
    normalizer: object  # Normalizer or (input, output) pair


def train_with_strategy(
    strategy: Strategy,
    target_spec: NetSpec,
    target_train: WindowSet,
    target_val: Optional[WindowSet],
    normalizer,
    config: TrainConfig,
    source_params: Optional[ModelParams] = None,
    source_spec: Optional[NetSpec] = None,
) -> StrategyResult:
    """Train a target-mode model under one strategy.

    Base trains from a fresh init.  FT/FTF transplant the source model's
    upper recurrent layers first; FTF additionally freezes them.  For SB,
    callers pass windows built by build_sb_samples (source-mode inputs) and
    an (input, output) normalizer pair; SB itself trains from scratch.
    """
    strategy = Strategy(strategy)
    if strategy in (Strategy.FT, Strategy.FTF):
        if source_params is None or source_spec is None:
            raise ConfigurationError(f"{strategy.value} requires a trained source model")
        plan = plan_transfer(source_spec, target_spec, strategy)
        rng = np.random.default_rng(config.seed)
        fresh = init_params(target_spec, int(rng.integers(2**63)))
        start = apply_transfer(source_params, fresh, plan)
        cfg = TrainConfig(
            epochs=config.epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
            seed=config.seed,
            freeze_mask=plan.freeze_mask,
        )
        params, trace = train(target_spec, target_train, target_val, normalizer, cfg, init=start)
    else:
        plan = TransferPlan(strategy=strategy)
        params, trace = train(target_spec, target_train, target_val, normalizer, config)
    return StrategyResult(strategy=strategy, params=params, trace=trace, plan=plan, normalizer=normalizer)
