"""Command-line entry point and report generation.

Reports are pure views over persisted run state: accuracy curves suitable
for log-x plotting, per-iteration class-distribution tables, and image
grids of the most/least confusing samples per iteration.
"""

from __future__ import annotations

import csv
import glob
import logging
import os
import re
import sys
import threading

import click
import numpy as np

from . import nn
from .augment import cifar_policy, contact_sheet, identity_policy, mnist_policy
from .confusion import load_scores
from .data import (Dataset, RunState, load_cifar10, load_mnist, load_run_state,
                   make_pools)
from .loop import ScheduleConfig, SimulatedOracle, StopRule, run
from .training import TrainConfig

log = logging.getLogger(__name__)


def _find_one(data_dir, names):
    for name in names:
        for cand in (os.path.join(data_dir, name), os.path.join(data_dir, name + ".gz")):
            if os.path.exists(cand):
                return cand
    raise click.ClickException(f"none of {names} found in {data_dir}")


def load_dataset(dataset: str, data_dir: str) -> Dataset:
    if dataset == "mnist":
        return load_mnist(
            _find_one(data_dir, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"]),
            _find_one(data_dir, ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]),
            _find_one(data_dir, ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]),
            _find_one(data_dir, ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]),
        )
    if dataset == "cifar10":
        batches = sorted(glob.glob(os.path.join(data_dir, "data_batch_*.bin")))
        if not batches:
            raise click.ClickException(f"no data_batch_*.bin files in {data_dir}")
        test = sorted(glob.glob(os.path.join(data_dir, "test_batch*.bin")))
        return load_cifar10(batches, test)
    raise click.ClickException(f"unknown dataset {dataset}")


def default_policy(dataset: str, elastic: bool = True):
    if dataset == "cifar10":
        return cifar_policy()
    policy = mnist_policy()
    if not elastic:
        from dataclasses import replace
        policy = replace(policy, elastic=None)
    return policy


# ---------------------------------------------------------------------------
# Report writers

def write_curves_csv(states: dict[str, RunState], path) -> None:
    """Rows of (mode, labeled_size, test_accuracy); labeled_size is the size
    the recorded accuracy was trained at."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "labeled_size", "test_accuracy"])
        for mode in sorted(states):
            for rec in states[mode].history:
                w.writerow([mode, rec.trained_size, f"{rec.test_accuracy:.6f}"])


def write_distribution_csv(state: RunState, num_classes: int, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "size"] + [f"class_{c}" for c in range(num_classes)])
        for rec in state.history:
            w.writerow([rec.iteration, rec.labeled_size] + list(rec.class_counts))


def write_gallery(ds: Dataset, scores_path, out_path, n: int = 20) -> None:
    """Image grid: the n most confusing samples (two rows) above the n least
    confusing (two rows)."""
    from PIL import Image as PILImage

    scores = load_scores(scores_path)  # stored sorted by descending entropy
    most = [s.sample_id for s in scores[:n]]
    least = [s.sample_id for s in scores[-n:]]
    tiles = most + least
    h, w, c = ds.images[0].shape
    per_row = 10
    rows = (len(tiles) + per_row - 1) // per_row
    pad = 2
    grid = np.zeros((rows * (h + pad) + pad, per_row * (w + pad) + pad, c),
                    dtype=np.float32)
    for idx, sid in enumerate(tiles):
        r, col = divmod(idx, per_row)
        y = pad + r * (h + pad)
        x = pad + col * (w + pad)
        grid[y:y + h, x:x + w, :] = ds.images[sid]
    arr = (np.clip(grid, 0, 1) * 255).round().astype(np.uint8)
    img = (PILImage.fromarray(arr[:, :, 0], mode="L") if c == 1
           else PILImage.fromarray(arr, mode="RGB"))
    img.save(out_path, format="PNG")


def write_reports(run_dirs: dict[str, str], out_dir, ds: Dataset | None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    states = {mode: load_run_state(os.path.join(d, "run_state.json"))
              for mode, d in run_dirs.items()}
    write_curves_csv(states, os.path.join(out_dir, "curves.csv"))
    for mode, state in states.items():
        nc = len(state.history[0].class_counts) if state.history else 10
        write_distribution_csv(state, nc,
                               os.path.join(out_dir, f"distribution_{mode}.csv"))
    if ds is not None:
        for mode, d in run_dirs.items():
            for scores_path in sorted(glob.glob(os.path.join(d, "scores_iter_*.csv"))):
                m = re.search(r"scores_iter_(\d+)", scores_path)
                write_gallery(ds, scores_path,
                              os.path.join(out_dir, f"gallery_{mode}_iter_{m.group(1)}.png"))


# ---------------------------------------------------------------------------
# Commands

@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log per-epoch progress.")
def main(verbose):
    """Guided labeling: entropy-driven active learning for image classifiers."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")


@main.command("run")
@click.option("--dataset", type=click.Choice(["mnist", "cifar10"]), required=True)
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["guided", "random", "both"]), default="guided")
@click.option("--oracle", type=click.Choice(["simulated", "human"]), default="simulated")
@click.option("--seed", type=int, default=0)
@click.option("--initial", type=int, default=160, help="Initial labeled set size.")
@click.option("--validation", type=int, default=10000, help="Validation set size.")
@click.option("--pool-limit", type=int, default=None, help="Cap the unlabeled pool.")
@click.option("--schedule", default="exp", help="'exp' or 'fixed:N'.")
@click.option("--k", type=int, default=16, help="Augmentation draws per RDE score.")
@click.option("--mu", type=float, default=0.3, help="Class-weight scaling factor.")
@click.option("--preset", type=click.Choice(["mnist_cnn7", "cifar_cnn11", "mlp"]),
              default=None)
@click.option("--patience", type=int, default=100)
@click.option("--max-epochs", type=int, default=2000)
@click.option("--batch-size", type=int, default=32)
@click.option("--lr", type=float, default=0.01)
@click.option("--budget", type=int, default=None, help="Stop labeling at this size.")
@click.option("--max-iterations", type=int, default=None)
@click.option("--target-accuracy", type=float, default=None)
@click.option("--no-elastic", is_flag=True, help="Disable elastic distortion.")
@click.option("--exhaust", is_flag=True, help="Clamp the final batch to the pool.")
@click.option("--serve", default=None, metavar="ADDR",
              help="host:port for the human labeling service.")
@click.option("--out", required=True, type=click.Path())
def cmd_run(dataset, data_dir, mode, oracle, seed, initial, validation, pool_limit,
            schedule, k, mu, preset, patience, max_epochs, batch_size, lr, budget,
            max_iterations, target_accuracy, no_elastic, exhaust, serve, out):
    """Execute a guided and/or random labeling run; artifacts land under --out."""
    if oracle == "human" and serve is None:
        raise click.UsageError("--oracle human requires --serve ADDR")
    if schedule == "exp":
        sched = ScheduleConfig("exponential", s=initial)
    elif schedule.startswith("fixed:"):
        sched = ScheduleConfig("fixed", fixed_n=int(schedule.split(":", 1)[1]))
    else:
        raise click.UsageError(f"bad --schedule {schedule!r} (use 'exp' or 'fixed:N')")
    if preset is None:
        preset = "mnist_cnn7" if dataset == "mnist" else "cifar_cnn11"

    ds = load_dataset(dataset, data_dir)
    policy = default_policy(dataset, elastic=not no_elastic)
    specs = nn.preset(preset)
    cfg = TrainConfig(adam=nn.AdamConfig(learning_rate=lr), batch_size=batch_size,
                      patience_epochs=patience, max_epochs=max_epochs, mu=mu,
                      policy=policy)
    stop = StopRule(target_accuracy=target_accuracy, max_iterations=max_iterations,
                    max_labeled=budget)
    modes = ["guided", "random"] if mode == "both" else [mode]
    os.makedirs(out, exist_ok=True)

    if oracle == "human":
        import uvicorn

        from .service import HumanOracle, create_app
        service_dir = os.path.join(out, "service")
        host, port = serve.rsplit(":", 1)
        # Status reflects the first (or only) arm's run directory.
        app = create_app(service_dir, ds, run_dir=os.path.join(out, modes[0]))
        threading.Thread(
            target=lambda: uvicorn.run(app, host=host, port=int(port), log_level="warning"),
            daemon=True).start()
        the_oracle = HumanOracle(service_dir, ds.num_classes)
        click.echo(f"labeling service on http://{serve} (data dir {service_dir})")
    else:
        the_oracle = SimulatedOracle(ds)

    run_dirs = {}
    try:
        for m in modes:
            out_m = os.path.join(out, m)
            state_path = os.path.join(out_m, "run_state.json")
            state = load_run_state(state_path) if os.path.exists(state_path) else None
            if state is None:
                pool = make_pools(ds, initial, validation, seed, pool_limit=pool_limit)
            else:
                pool = state.pool
                click.echo(f"resuming {m} run at iteration {state.iteration}")
            run(m, ds, pool, specs, cfg, sched, k, the_oracle, stop, out_m, seed,
                exhaust=exhaust, state=state)
            run_dirs[m] = out_m
        write_reports(run_dirs, out, ds)
    except Exception as e:  # noqa: BLE001 - runtime failures exit 1, not a traceback
        log.exception("run failed")
        raise click.ClickException(str(e)) from e


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--dataset", type=click.Choice(["mnist", "cifar10"]), default=None)
@click.option("--data-dir", type=click.Path(exists=True), default=None,
              help="Needed for gallery images; CSVs work without it.")
@click.option("--out", required=True, type=click.Path())
def cmd_report(run_dirs, dataset, data_dir, out):
    """Regenerate curves/distribution CSVs and confusion galleries from runs.

    Each RUN_DIR must hold a run_state.json; its mode is read from the state.
    """
    ds = load_dataset(dataset, data_dir) if dataset and data_dir else None
    dirs = {}
    for d in run_dirs:
        state = load_run_state(os.path.join(d, "run_state.json"))
        dirs[state.mode] = d
    write_reports(dirs, out, ds)
    click.echo(f"reports written to {out}")


@main.command("inspect-augment")
@click.option("--dataset", type=click.Choice(["mnist", "cifar10"]), required=True)
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--index", type=int, default=0, help="Sample id to augment.")
@click.option("--n", type=int, default=25)
@click.option("--seed", type=int, default=0)
@click.option("--no-elastic", is_flag=True)
@click.option("--identity", is_flag=True, help="Degenerate (no-op) policy.")
@click.option("--out", required=True, type=click.Path())
def cmd_inspect_augment(dataset, data_dir, index, n, seed, no_elastic, identity, out):
    """Write a contact sheet of N augmentations of one sample."""
    ds = load_dataset(dataset, data_dir)
    h, w = ds.images.shape[1:3]
    policy = (identity_policy((h, w)) if identity
              else default_policy(dataset, elastic=not no_elastic))
    contact_sheet(ds.sample(index), policy, n, seed, out)
    click.echo(f"contact sheet written to {out}")


@main.command("make-demo-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--train", type=int, default=13000)
@click.option("--test", type=int, default=2000)
@click.option("--seed", type=int, default=0)
def cmd_make_demo_data(out, train, test, seed):
    """Generate an MNIST-format demo corpus from scikit-learn's digits."""
    from .demo import write_demo_dataset
    paths = write_demo_dataset(out, train=train, test=test, seed=seed)
    for k, v in paths.items():
        click.echo(f"{k}: {v}")


if __name__ == "__main__":
    main()
