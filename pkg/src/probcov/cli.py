"""Command-line interface.

Subcommands cover the full workflow: ``simulate`` datasets, fit and
calibrate a per-step monitor with ``train-calibrate``, query a single step
with ``predict``, replay an episode with ``monitor`` (the exit code reports
whether an alarm fired), and reproduce the evaluation pipeline with
``evaluate``.

Defaults can be supplied via ``--config FILE`` holding ``key = value``
lines (keys match option names, ``#`` starts a comment); command-line
flags override file values.  If the environment variable
``PROBCOV_OUT_ROOT`` is set, relative ``--out`` paths are resolved under
it.  Every command that writes artifacts also records its fully resolved
parameters as ``run_config.json`` next to them.
"""

from __future__ import annotations

import json
import logging
import math
import os

import click
import numpy as np

from ._io import atomic_write_json
from .conformal import AT_LEAST, AT_MOST, conformal_interval, scores_from_levels
from .coverage import TargetInterval
from .evaluate import ExperimentConfig, partition, run_experiment
from .monitor import EVERY_CROSSING, FIRST_CROSSING, MonitorSuite, alarms_to_csv, build_monitor
from .sim import DOMAINS, default_config, generate_dataset, load_dataset, save_dataset

ALARM_EXIT_CODE = 3

_COMMANDS = ("simulate", "train-calibrate", "predict", "monitor", "evaluate")


def _parse_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise click.ClickException(
                    f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve_out(ctx, out):
    root = ctx.obj.get("out_root")
    if root and not os.path.isabs(out):
        return os.path.join(root, out)
    return out


def _record_config(directory, command, params):
    os.makedirs(directory, exist_ok=True)
    atomic_write_json(os.path.join(directory, "run_config.json"),
                      {"command": command, "parameters": params})


def _target(target_lo, target_hi):
    lo = float(target_lo)
    hi = float(target_hi)
    if math.isnan(lo) or math.isnan(hi):
        raise click.ClickException("target endpoints must not be NaN")
    try:
        return TargetInterval(lo, hi)
    except ValueError as exc:
        raise click.ClickException(str(exc))


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Key-value file providing flag defaults.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.version_option(package_name="probcov")
@click.pass_context
def main(ctx, config_path, verbose):
    """Calibrated coverage bounds and prediction intervals for episodes."""
    if verbose:
        logging.basicConfig(level=logging.INFO,
                            format="%(asctime)s %(name)s: %(message)s")
    ctx.obj = {"out_root": os.environ.get("PROBCOV_OUT_ROOT")}
    if config_path:
        file_values = _parse_config_file(config_path)
        ctx.default_map = {name: dict(file_values) for name in _COMMANDS}


@main.command()
@click.option("--domain", type=click.Choice(DOMAINS), required=True)
@click.option("--episodes", type=int, default=100, show_default=True,
              help="Number of episodes to sample.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, help="Dataset directory to write.")
@click.pass_context
def simulate(ctx, domain, episodes, seed, out):
    """Sample a dataset of episodes and write it as CSV + metadata."""
    out = _resolve_out(ctx, out)
    config = default_config(domain)
    try:
        eps = generate_dataset(config, episodes, seed)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    save_dataset(eps, out, meta={"seed": seed})
    _record_config(out, "simulate", {"domain": domain, "episodes": episodes,
                                     "seed": seed, "out": out})
    click.echo(f"wrote {len(eps)} episodes to {out}")


@main.command("train-calibrate")
@click.option("--dataset", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--partition-seed", type=int, default=101, show_default=True)
@click.option("--n-train", type=int, default=2500, show_default=True)
@click.option("--n-cal", type=int, default=2500, show_default=True)
@click.option("--n-test", type=int, default=5000, show_default=True)
@click.option("--trees", type=int, default=100, show_default=True)
@click.option("--min-leaf", type=int, default=5, show_default=True)
@click.option("--max-features", type=float, default=1.0 / 3.0, show_default=True)
@click.option("--bootstrap/--no-bootstrap", default=True, show_default=True)
@click.option("--forest-seed", type=int, default=7, show_default=True)
@click.option("--out", required=True, help="Output directory for the suite.")
@click.pass_context
def train_calibrate(ctx, dataset, partition_seed, n_train, n_cal, n_test,
                    trees, min_leaf, max_features, bootstrap, forest_seed, out):
    """Partition a dataset, fit per-step models, calibrate, and persist."""
    out = _resolve_out(ctx, out)
    episodes, meta = load_dataset(dataset)
    try:
        train, cal, test = partition(episodes, n_train, n_cal, n_test,
                                     partition_seed)
        suite = build_monitor(
            train, cal,
            forest_params=dict(n_estimators=trees, min_samples_leaf=min_leaf,
                               max_features=max_features, bootstrap=bootstrap),
            random_state=forest_seed)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    os.makedirs(out, exist_ok=True)
    suite.save(os.path.join(out, "suite.npz"))
    atomic_write_json(os.path.join(out, "partition.json"), {
        "dataset": os.path.abspath(dataset),
        "train": [ep.episode_id for ep in train],
        "cal": [ep.episode_id for ep in cal],
        "test": [ep.episode_id for ep in test],
    })
    _record_config(out, "train-calibrate", {
        "dataset": os.path.abspath(dataset), "partition_seed": partition_seed,
        "n_train": n_train, "n_cal": n_cal, "n_test": n_test, "trees": trees,
        "min_leaf": min_leaf, "max_features": max_features,
        "bootstrap": bootstrap, "forest_seed": forest_seed, "out": out,
        "domain": meta.get("domain"),
    })
    click.echo(f"wrote suite ({suite.horizon} steps, "
               f"{suite.n_calibration} calibration episodes) to {out}")


def _load_step_features(dataset, episode_id, step, features, horizon, n_features):
    if features is not None:
        vec = np.array([float(tok) for tok in features.split(",")],
                       dtype=np.float64)
        if vec.shape[0] != n_features:
            raise click.ClickException(
                f"inline features have length {vec.shape[0]}, suite expects "
                f"{n_features}")
        return vec
    if dataset is None:
        raise click.ClickException("provide either --dataset/--episode-id or "
                                   "--features")
    episodes, _ = load_dataset(dataset)
    by_id = {ep.episode_id: ep for ep in episodes}
    if episode_id is None:
        if len(episodes) != 1:
            raise click.ClickException("--episode-id is required when the "
                                       "dataset holds more than one episode")
        episode = episodes[0]
    elif episode_id in by_id:
        episode = by_id[episode_id]
    else:
        raise click.ClickException(f"episode {episode_id} not in dataset")
    if not (0 <= step < episode.horizon):
        raise click.ClickException(f"step {step} outside episode horizon "
                                   f"[0, {episode.horizon})")
    return episode.features[step]


@main.command()
@click.option("--suite", "suite_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Path(exists=True, file_okay=False),
              default=None)
@click.option("--episode-id", type=int, default=None)
@click.option("--step", "-t", type=int, required=True)
@click.option("--features", default=None,
              help="Inline comma-separated feature vector for the step.")
@click.option("--target-lo", type=float, required=True,
              help="Target interval lower end; -inf allowed.")
@click.option("--target-hi", type=float, required=True,
              help="Target interval upper end; inf allowed.")
@click.option("--delta", type=float, default=None,
              help="Also print the two calibrated prediction intervals.")
def predict(suite_path, dataset, episode_id, step, features, target_lo,
            target_hi, delta):
    """Print the coverage bracket (and optional intervals) for one step."""
    suite = MonitorSuite.load(suite_path)
    if not (0 <= step < suite.horizon):
        raise click.ClickException(f"step {step} outside monitored horizon "
                                   f"[0, {suite.horizon})")
    vec = _load_step_features(dataset, episode_id, step, features,
                              suite.horizon, suite.n_features)
    target = _target(target_lo, target_hi)
    try:
        bounds = suite.step_probability(step, vec, target)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    fields = [f"t={step}", f"p_lower={bounds.p_lower!r}",
              f"p_upper={bounds.p_upper!r}", f"rank_lo={bounds.rank_lo}",
              f"rank_hi={bounds.rank_hi}"]
    if delta is not None:
        banked = float(vec[-1])
        model = suite.models[step]
        scores = scores_from_levels(suite.levels[step].levels)
        try:
            for label, guarantee in (("at_most", AT_MOST),
                                     ("at_least", AT_LEAST)):
                iv = conformal_interval(model, scores, vec, delta, guarantee)
                fields.append(f"interval_{label}_lo={banked + iv.lo!r}")
                fields.append(f"interval_{label}_hi={banked + iv.hi!r}")
        except ValueError as exc:
            raise click.ClickException(str(exc))
    click.echo(" ".join(fields))


@main.command()
@click.option("--suite", "suite_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--episode-id", type=int, default=None)
@click.option("--target-lo", type=float, required=True)
@click.option("--target-hi", type=float, required=True)
@click.option("--threshold", type=float, required=True,
              help="Alarm when p_lower drops below this value.")
@click.option("--mode", type=click.Choice([FIRST_CROSSING, EVERY_CROSSING]),
              default=FIRST_CROSSING, show_default=True)
@click.option("--out", default=None,
              help="Directory for trace.csv and alarms.csv.")
@click.pass_context
def monitor(ctx, suite_path, dataset, episode_id, target_lo, target_hi,
            threshold, mode, out):
    """Replay one episode against the monitor; exit code 3 when it alarms."""
    suite = MonitorSuite.load(suite_path)
    episodes, _ = load_dataset(dataset)
    by_id = {ep.episode_id: ep for ep in episodes}
    if episode_id is None:
        if len(episodes) != 1:
            raise click.ClickException("--episode-id is required when the "
                                       "dataset holds more than one episode")
        episode = episodes[0]
    elif episode_id in by_id:
        episode = by_id[episode_id]
    else:
        raise click.ClickException(f"episode {episode_id} not in dataset")
    target = _target(target_lo, target_hi)
    try:
        timeline, alarms = suite.monitor_episode(episode, target, threshold,
                                                 mode)
    except ValueError as exc:
        raise click.ClickException(str(exc))

    for t, bounds in enumerate(timeline):
        click.echo(f"t={t} p_lower={bounds.p_lower!r} "
                   f"p_upper={bounds.p_upper!r}")
    for alarm in alarms:
        click.echo(f"ALARM t={alarm.t} p_lower={alarm.p_lower!r} "
                   f"threshold={alarm.threshold!r}")
    if out is not None:
        out = _resolve_out(ctx, out)
        os.makedirs(out, exist_ok=True)
        from ._io import atomic_write_text

        lines = ["t,p_lower,p_upper"]
        lines += [f"{t},{b.p_lower!r},{b.p_upper!r}"
                  for t, b in enumerate(timeline)]
        atomic_write_text(os.path.join(out, "trace.csv"),
                          "\n".join(lines) + "\n")
        alarms_to_csv(alarms, os.path.join(out, "alarms.csv"))
        _record_config(out, "monitor", {
            "suite": os.path.abspath(suite_path),
            "dataset": os.path.abspath(dataset),
            "episode_id": episode.episode_id, "target_lo": target.lo,
            "target_hi": target.hi, "threshold": threshold, "mode": mode,
            "out": out,
        })
    if alarms:
        ctx.exit(ALARM_EXIT_CODE)


@main.command()
@click.option("--domain", type=click.Choice(DOMAINS), default=None,
              help="Simulate the dataset for this domain.")
@click.option("--dataset", type=click.Path(exists=True, file_okay=False),
              default=None, help="Reuse an existing dataset directory.")
@click.option("--episodes", type=int, default=10000, show_default=True)
@click.option("--seed", type=int, default=424242, show_default=True,
              help="Simulation seed.")
@click.option("--forest-seed", type=int, default=7, show_default=True)
@click.option("--partition-seeds", default="101,102,103,104,105",
              show_default=True, help="Comma-separated partition seeds.")
@click.option("--n-train", type=int, default=2500, show_default=True)
@click.option("--n-cal", type=int, default=2500, show_default=True)
@click.option("--n-test", type=int, default=5000, show_default=True)
@click.option("--delta", type=float, default=0.2, show_default=True)
@click.option("--bins", type=int, default=30, show_default=True)
@click.option("--trees", type=int, default=100, show_default=True)
@click.option("--min-leaf", type=int, default=5, show_default=True)
@click.option("--max-features", type=float, default=0.6, show_default=True)
@click.option("--trace-episodes", type=int, default=10, show_default=True)
@click.option("--out", required=True, help="Report directory.")
@click.pass_context
def evaluate(ctx, domain, dataset, episodes, seed, forest_seed,
             partition_seeds, n_train, n_cal, n_test, delta, bins, trees,
             min_leaf, max_features, trace_episodes, out):
    """Run the full evaluation pipeline and write a report directory."""
    out = _resolve_out(ctx, out)
    loaded = None
    if dataset is not None:
        loaded, meta = load_dataset(dataset)
        domain = meta["domain"]
        episodes = len(loaded)
    elif domain is None:
        raise click.ClickException("provide --domain or --dataset")
    try:
        seeds = tuple(int(tok) for tok in partition_seeds.split(","))
        config = ExperimentConfig(
            domain=domain, episode_count=episodes, n_train=n_train,
            n_cal=n_cal, n_test=n_test, partition_seeds=seeds, delta=delta,
            n_bins=bins, sim_seed=seed, forest_seed=forest_seed,
            n_estimators=trees, min_samples_leaf=min_leaf,
            max_features=max_features, n_trace_episodes=trace_episodes)
        report = run_experiment(config, episodes=loaded)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    report.write(out)
    _record_config(out, "evaluate", report.config | {"out": out})
    for line in report.summary_lines():
        click.echo(line)
    click.echo(f"report written to {out}")


if __name__ == "__main__":
    main()
