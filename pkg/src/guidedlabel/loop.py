"""The guided-labeling outer loop: retrain from scratch, score the
unlabeled pool by mean response-distribution entropy, select a batch under
the exponential (or fixed) schedule, obtain labels from an oracle, grow the
labeled set, repeat. Also the paired random-selection baseline arm.

All randomness derives from (root_seed, site_tag, iteration, ...), so a run
can be killed and resumed to a bit-identical history, and guided/random
arms given the same root seed consume identical schedules.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .confusion import dump_scores, score_pool, select_top_n
from .data import (Dataset, IterationRecord, Pool, RunState, class_distribution,
                   save_run_state)
from .seeds import derive_seed, rng_for
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)


class LoopError(Exception):
    pass


class OracleError(LoopError):
    """Oracle returned the wrong number of labels or an invalid label."""


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "exponential"  # "exponential" | "fixed"
    s: int = 160
    fixed_n: int = 0

    def __post_init__(self):
        if self.kind not in ("exponential", "fixed"):
            raise ValueError("schedule kind must be 'exponential' or 'fixed'")
        if self.kind == "exponential" and self.s < 1:
            raise ValueError("exponential schedule needs s >= 1")
        if self.kind == "fixed" and self.fixed_n < 1:
            raise ValueError("fixed schedule needs fixed_n >= 1")


def schedule_n(i: int, cfg: ScheduleConfig) -> int:
    """Batch size for iteration i >= 1: 2^(i-1) * s, or the fixed size."""
    if i < 1:
        raise ValueError("iteration must be >= 1")
    if cfg.kind == "fixed":
        return cfg.fixed_n
    return (2 ** (i - 1)) * cfg.s


@dataclass(frozen=True)
class StopRule:
    target_accuracy: float | None = None
    max_iterations: int | None = None
    max_labeled: int | None = None  # final training still runs at this budget


class Oracle:
    """Label source: given sample ids, eventually returns one label per id."""

    def label(self, sample_ids: list[int]) -> list[int]:
        raise NotImplementedError


class SimulatedOracle(Oracle):
    """Answers instantly with the dataset's ground-truth labels."""

    def __init__(self, ds: Dataset):
        self.ds = ds

    def label(self, sample_ids: list[int]) -> list[int]:
        out = []
        for i in sample_ids:
            if not 0 <= int(i) < len(self.ds):
                raise OracleError(f"unknown sample id {i}")
            out.append(int(self.ds.labels[int(i)]))
        return out


def label_confusing_samples(net: nn.Network, ds: Dataset, pool: Pool, n: int,
                            k: int, policy, seed: int,
                            scores_out=None) -> list[int]:
    """Score every unlabeled sample by mean RDE and return the top
    min(n, pool size) ids."""
    if n < 1:
        raise LoopError("n must be >= 1")
    unlabeled = sorted(pool.unlabeled_ids)
    if not unlabeled:
        raise LoopError("unlabeled pool is empty")
    scores = score_pool(net, ds.samples(unlabeled), policy, k, seed)
    if scores_out is not None:
        dump_scores(scores, scores_out)
    return select_top_n(scores, min(n, len(unlabeled)))


def _check_oracle_reply(ids: list[int], labels: list[int], num_classes: int):
    if len(labels) != len(ids):
        raise OracleError(f"oracle returned {len(labels)} labels for {len(ids)} ids")
    for lab in labels:
        if not 0 <= int(lab) < num_classes:
            raise OracleError(f"oracle label {lab} outside [0, {num_classes})")


def run(mode: str, ds: Dataset, pool: Pool, specs: list[nn.LayerSpec],
        train_cfg: TrainConfig, schedule_cfg: ScheduleConfig, k: int,
        oracle: Oracle, stop: StopRule, out_dir, root_seed: int,
        exhaust: bool = False, state: RunState | None = None,
        score_policy=None) -> RunState:
    """Execute (or resume) one guided or random labeling run.

    Each iteration builds a freshly initialized network, trains it with
    early stopping on the current labeled set, records test accuracy, then
    selects and labels the next batch. State is persisted to
    ``out_dir/run_state.json`` after every iteration; pass the loaded state
    to resume.
    """
    if mode not in ("guided", "random"):
        raise LoopError("mode must be 'guided' or 'random'")
    os.makedirs(out_dir, exist_ok=True)
    input_shape = ds.images.shape[1:]
    score_policy = score_policy if score_policy is not None else train_cfg.policy

    if state is None:
        # The initial seed set arrives already labeled.
        labels = {int(i): int(ds.labels[i]) for i in pool.labeled_ids}
        state = RunState(mode=mode, root_seed=root_seed, iteration=0,
                         pool=pool, labels=labels)
    elif state.mode != mode or state.root_seed != root_seed:
        raise LoopError("resume state does not match this run's mode/seed")

    state_path = os.path.join(out_dir, "run_state.json")
    events_path = os.path.join(out_dir, "events.log")

    while True:
        i = state.iteration + 1
        if stop.max_iterations is not None and i > stop.max_iterations:
            break
        labeled_size = len(state.pool.labeled_ids)
        budget_hit = (stop.max_labeled is not None
                      and labeled_size >= stop.max_labeled)
        n = schedule_n(i, schedule_cfg)
        available = len(state.pool.unlabeled_ids)

        # Pool guard, checked before training as in the outer-loop pseudo
        # code: with the exponential schedule, "unlabeled >= labeled" is
        # exactly "available >= n". A hit budget still gets one final
        # training pass at its target size; --exhaust clamps the last batch
        # and trains once more on the fully consumed pool.
        eval_only = budget_hit
        n_sel = n
        if available < n and not budget_hit:
            if exhaust and available > 0:
                n_sel = available
            elif (exhaust and available == 0 and state.history
                  and state.history[-1].selected_ids):
                eval_only = True
            else:
                break

        t0 = time.monotonic()
        net = nn.build_network(specs, input_shape,
                               seed=derive_seed(root_seed, "init", i))
        cfg_i = replace(train_cfg, seed=derive_seed(root_seed, "train", i))
        best, report = train(net, ds, state.pool, cfg_i, labels=state.labels)
        test_acc = evaluate(best, ds, state.pool.test_ids)
        nn.save_network(best, os.path.join(out_dir, f"net_iter_{i:03d}.npz"))

        target_hit = (stop.target_accuracy is not None
                      and test_acc >= stop.target_accuracy)

        selected: list[int] = []
        if not (eval_only or target_hit):
            n_sel = min(n_sel, available)
            if mode == "guided":
                selected = label_confusing_samples(
                    best, ds, state.pool, n_sel, k, score_policy,
                    seed=derive_seed(root_seed, "score", i),
                    scores_out=os.path.join(out_dir, f"scores_iter_{i:03d}.csv"))
            else:
                unlabeled = sorted(state.pool.unlabeled_ids)
                pick = rng_for(root_seed, "select", i).choice(
                    len(unlabeled), size=n_sel, replace=False)
                selected = [unlabeled[j] for j in sorted(pick)]
            got = oracle.label(selected)
            try:
                _check_oracle_reply(selected, got, ds.num_classes)
            except OracleError:
                save_run_state(state, state_path)
                raise
            state.pool.move_to_labeled(selected)
            state.labels.update({int(s): int(l) for s, l in zip(selected, got)})

        dist = class_distribution(state.pool.labeled_ids, ds)
        state.history.append(IterationRecord(
            iteration=i,
            trained_size=labeled_size,
            labeled_size=len(state.pool.labeled_ids),
            validation_accuracy=report.best_validation_accuracy,
            test_accuracy=test_acc,
            class_counts=dist.counts,
            selected_ids=sorted(selected),
            epochs_run=report.epochs_run,
        ))
        state.iteration = i
        save_run_state(state, state_path)
        wall = time.monotonic() - t0
        line = (f"iteration={i} n_requested={n} n_selected={len(selected)} "
                f"labeled_size={len(state.pool.labeled_ids)} "
                f"val_acc={report.best_validation_accuracy:.6f} "
                f"test_acc={test_acc:.6f} wall_time={wall:.2f}")
        with open(events_path, "a") as f:
            f.write(line + "\n")
        log.info("%s %s", mode, line)

        if eval_only or target_hit:
            break
    return state
