"""Command-line entry points: gen, simulate, rank, serve.

Experiment manifests are JSON and validated fully before anything runs.
All result files are written atomically (temp file + rename) and are
byte-identical across invocations with the same master seed; raw per-run
dumps are always written next to the aggregates so results can be
re-derived independently.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import sys
import tempfile
from pathlib import Path

import click

from .engine import (
    DEFAULT_FRACTIONS,
    ESTIMATOR_NAMES,
    STRATEGY_NAMES,
    RunConfig,
    ranking_experiment,
    simulate_runs,
)
from .errors import ActiveTestError, ConfigError, ParseError
from .instances import build_instance_benchmark
from .io import load_instance_dataset, load_tag_dataset, write_instance_dataset, write_tag_dataset
from .metrics import AveragePrecision, MeanAP, PrecAtK
from .pool import EvaluationPool
from .synth import FlipSpec, InstanceSynthSpec, PairedTagSynthSpec, TagSynthSpec

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _atomic_write(path: Path, data: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- manifest parsing ---------------------------------------------------


def _load_manifest(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"manifest {path!r} not found")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path!r} is not valid JSON: {exc.msg} (line {exc.lineno})")
    if not isinstance(manifest, dict):
        raise ConfigError("manifest must be a JSON object")
    return manifest


def _parse_metric(obj) -> PrecAtK | AveragePrecision | MeanAP:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError("metric must be an object with a 'kind'")
    kind = obj["kind"]
    if kind == "prec_at_k":
        k = obj.get("k")
        if not isinstance(k, int) or k < 1:
            raise ConfigError("metric.k must be a positive integer")
        return PrecAtK(k)
    if kind == "average_precision":
        return AveragePrecision()
    if kind == "mean_ap":
        thresholds = obj.get("iou_thresholds")
        if thresholds is None:
            return MeanAP()
        try:
            return MeanAP(tuple(float(t) for t in thresholds))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"metric.iou_thresholds invalid: {exc}")
    raise ConfigError(f"unknown metric kind {kind!r}")


def _parse_flip(obj) -> FlipSpec:
    try:
        return FlipSpec(
            p_y1_given_z1=float(obj.get("p_y1_given_z1", 0.38)),
            p_y1_given_z0=float(obj.get("p_y1_given_z0", 0.01)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"flip priors invalid: {exc}")


def _parse_tag_synth(obj, seed: int) -> TagSynthSpec:
    try:
        return TagSynthSpec(
            n_categories=int(obj.get("n_categories", 10)),
            items_per_category=int(obj.get("items_per_category", 500)),
            positive_rate=float(obj.get("positive_rate", 0.25)),
            flip=_parse_flip(obj.get("flip", {})),
            score_mu_pos=float(obj.get("score_mu_pos", 1.0)),
            score_mu_neg=float(obj.get("score_mu_neg", -1.0)),
            score_sigma=float(obj.get("score_sigma", 1.0)),
            seed=int(obj.get("seed", seed)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tag synthesis spec invalid: {exc}")


def _parse_instance_synth(obj, seed: int) -> InstanceSynthSpec:
    try:
        return InstanceSynthSpec(
            n_images=int(obj.get("n_images", 40)),
            instances_per_image=int(obj.get("instances_per_image", 5)),
            image_size=int(obj.get("image_size", 64)),
            miss_rate=float(obj.get("miss_rate", 0.0)),
            center_jitter=float(obj.get("center_jitter", 2.0)),
            extent_jitter=float(obj.get("extent_jitter", 0.15)),
            score_noise=float(obj.get("score_noise", 0.1)),
            distractor_rate=float(obj.get("distractor_rate", 0.3)),
            seed=int(obj.get("seed", seed)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"instance synthesis spec invalid: {exc}")


def _simulate_template(manifest: dict, seed: int):
    """Template for simulate: a dataset path or a synthesis spec."""
    if "dataset" in manifest and manifest["dataset"]:
        entry = manifest["dataset"]
        if isinstance(entry, dict):
            dets, gts = load_instance_dataset(entry["detections"], entry["ground_truth"])
            return (dets, gts)
        pool = load_tag_dataset(entry)
        if not pool.has_full_sim_truth():
            raise ConfigError(
                f"dataset {entry!r} lacks sim_truth; simulation needs a simulated oracle"
            )
        return pool
    synth = manifest.get("synth")
    if not isinstance(synth, dict):
        raise ConfigError("manifest needs either 'dataset' or 'synth'")
    task = synth.get("task", "tag")
    if task == "tag":
        return _parse_tag_synth(synth, seed)
    if task == "instance":
        return _parse_instance_synth(synth, seed)
    raise ConfigError(f"synth.task must be 'tag' or 'instance', got {task!r}")


def _initial_unvetted(template) -> int:
    if isinstance(template, EvaluationPool):
        return template.n_unvetted
    if isinstance(template, TagSynthSpec):
        return template.n_categories * template.items_per_category
    if isinstance(template, PairedTagSynthSpec):
        return template.base.n_categories * template.base.items_per_category
    if isinstance(template, InstanceSynthSpec):
        # detection counts vary slightly per seed; size from one sample
        from .synth import synthesize_instance_dataset

        dets, _ = synthesize_instance_dataset(template)
        return len(dets)
    if isinstance(template, tuple):
        dets, _ = template
        return len(dets)
    if isinstance(template, list) and template:
        return _initial_unvetted(template[0])
    raise ConfigError("cannot size template")


def _grid_config(manifest: dict, template, estimator: str, strategy: str) -> RunConfig:
    metric = _parse_metric(manifest.get("metric", {"kind": "prec_at_k", "k": 48}))
    fractions = tuple(manifest.get("budget_fractions", DEFAULT_FRACTIONS))
    if not fractions or any(not (0.0 < f <= 1.0) for f in fractions):
        raise ConfigError("budget_fractions must lie in (0, 1]")
    u0 = _initial_unvetted(template)
    budget = int(round(max(fractions) * u0))
    batch_size = int(manifest.get("batch_size", max(1, u0 // 50)))
    seed = int(manifest.get("seed", 0))
    return RunConfig(
        metric=metric,
        estimator=estimator,
        strategy=strategy,
        budget=max(budget, 1),
        batch_size=max(1, min(batch_size, max(budget, 1))),
        seed=seed,
        report_fractions=tuple(float(f) for f in fractions),
    )


# -- commands ----------------------------------------------------------


@click.group()
def main():
    """Active-testing toolkit: estimate benchmark metrics with partial vetting."""


@main.command("gen")
@click.option("--spec", "spec_path", required=True, help="JSON generation spec")
@click.option("--out", "out_dir", required=True, help="output directory")
@click.option("--seed", default=0, show_default=True, help="seed when the spec has none")
def cmd_gen(spec_path, out_dir, seed):
    """Generate a synthetic dataset (tag or instance) from a JSON spec."""
    try:
        spec_obj = _load_manifest(spec_path)
        task = spec_obj.get("task", "tag")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if task == "tag":
            from .synth import synthesize_tag_dataset

            spec = _parse_tag_synth(spec_obj, seed)
            pool = synthesize_tag_dataset(spec)
            path = out / "tags.jsonl"
            write_tag_dataset(pool, path)
            noisy_rate = float(pool.noisy.mean())
            true_rate = float((pool.sim_truth == 1).mean())
            click.echo(
                f"wrote {path} items={len(pool)} categories={len(pool.categories)} "
                f"noisy_positive_rate={noisy_rate:.4f} true_positive_rate={true_rate:.4f}"
            )
        elif task == "instance":
            from .synth import synthesize_instance_dataset

            spec = _parse_instance_synth(spec_obj, seed)
            dets, gts = synthesize_instance_dataset(spec)
            det_path, gt_path = out / "detections.jsonl", out / "ground_truth.jsonl"
            write_instance_dataset(dets, gts, det_path, gt_path)
            bench = build_instance_benchmark(dets, gts, 0.5)
            pool_path = out / "pool.jsonl"
            write_tag_dataset(bench.pool, pool_path)
            flips = int((bench.pool.noisy != bench.pool.sim_truth).sum())
            click.echo(
                f"wrote {det_path} ({len(dets)} detections), {gt_path} ({len(gts)} instances), "
                f"{pool_path} (pool at IoU 0.5, {flips} noisy-label flips)"
            )
        else:
            raise ConfigError(f"spec.task must be 'tag' or 'instance', got {task!r}")
    except (ConfigError, ParseError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    except ActiveTestError as exc:
        _fail(EXIT_RUNTIME, str(exc))


SIM_HEADER = ["cell_id", "step", "vetted_fraction", "mean_abs_error", "std_abs_error"]
RANK_HEADER = ["step", "vetted_fraction", "gap_mse", "flip_rate", "n_excluded"]


@main.command("simulate")
@click.option("--manifest", "manifest_path", required=True, help="JSON experiment manifest")
@click.option("--out", "out_dir", required=True, help="output directory")
@click.option("--jobs", default=1, show_default=True, help="parallel trial workers")
@click.option("--seed", default=None, type=int, help="override the manifest master seed")
def cmd_simulate(manifest_path, out_dir, jobs, seed):
    """Run an (estimator x strategy) grid of simulated active-testing runs."""
    try:
        manifest = _load_manifest(manifest_path)
        if seed is not None:
            manifest["seed"] = seed
        estimators = manifest.get("estimators", ["naive"])
        strategies = manifest.get("strategies", ["random"])
        if not estimators or not strategies:
            raise ConfigError("estimator and strategy lists must be non-empty")
        for e in estimators:
            if e not in ESTIMATOR_NAMES:
                raise ConfigError(f"unknown estimator {e!r}")
        for s in strategies:
            if s not in STRATEGY_NAMES:
                raise ConfigError(f"unknown strategy {s!r}")
        n_runs = int(manifest.get("n_runs", 1))
        template = _simulate_template(manifest, int(manifest.get("seed", 0)))
        out = Path(out_dir)
    except (ConfigError, ParseError) as exc:
        _fail(EXIT_VALIDATION, str(exc))

    try:
        for estimator in estimators:
            for strategy in strategies:
                config = _grid_config(manifest, template, estimator, strategy)
                agg = simulate_runs(template, config, n_runs, jobs=jobs)
                cell = f"{estimator}_{strategy}"
                rows = [
                    [cell, step, _fmt(agg.vetted_fraction[step]), _fmt(agg.mean_error[step]), _fmt(agg.std_error[step])]
                    for step in range(len(agg.mean_error))
                ]
                _atomic_write(out / f"cell_{cell}.csv", _csv_text(SIM_HEADER, rows))
                raw = {
                    "cell_id": cell,
                    "n_runs": n_runs,
                    "runs": [
                        [
                            {
                                "n_vetted": s.n_vetted,
                                "vetted_fraction": s.vetted_fraction,
                                "mean_abs_error": s.mean_abs_error,
                            }
                            for s in run.steps
                        ]
                        for run in agg.runs
                    ],
                }
                _atomic_write(out / f"cell_{cell}_runs.json", json.dumps(raw, indent=1) + "\n")
                click.echo(f"cell {cell}: final mean error {agg.mean_error[-1]:.6f}")
    except ActiveTestError as exc:
        _fail(EXIT_RUNTIME, str(exc))


@main.command("rank")
@click.option("--manifest", "manifest_path", required=True, help="JSON ranking manifest")
@click.option("--out", "out_dir", required=True, help="output directory")
@click.option("--jobs", default=1, show_default=True, help="parallel trial workers")
@click.option("--seed", default=None, type=int, help="override the manifest master seed")
def cmd_rank(manifest_path, out_dir, jobs, seed):
    """Estimate the metric gap and ranking flip rate between two systems."""
    try:
        manifest = _load_manifest(manifest_path)
        if seed is not None:
            manifest["seed"] = seed
        master_seed = int(manifest.get("seed", 0))
        if "datasets" in manifest:
            entry = manifest["datasets"]
            if not (isinstance(entry, list) and len(entry) == 2):
                raise ConfigError("'datasets' must list exactly two score files")
            pool_a = load_tag_dataset(entry[0])
            pool_b = load_tag_dataset(entry[1])
            if pool_a.ids != pool_b.ids:
                diverging = next(
                    (i for i, (a, b) in enumerate(zip(pool_a.ids, pool_b.ids)) if a != b),
                    min(len(pool_a.ids), len(pool_b.ids)),
                )
                raise ConfigError(
                    f"systems must score identical items; first divergence at record {diverging + 1}"
                )
            for pool in (pool_a, pool_b):
                if not pool.has_full_sim_truth():
                    raise ConfigError("ranking simulation needs sim_truth in both files")
            template = [pool_a, pool_b]
        else:
            synth = manifest.get("synth")
            if not isinstance(synth, dict):
                raise ConfigError("manifest needs 'datasets' or 'synth'")
            template = PairedTagSynthSpec(
                base=_parse_tag_synth(synth, master_seed),
                mu_pos_gap=float(synth.get("mu_pos_gap", 0.15)),
                score_correlation=float(synth.get("score_correlation", 0.7)),
            )
        estimator = manifest.get("estimator", "learned")
        strategy = manifest.get("strategy", "meec")
        n_trials = int(manifest.get("n_trials", 1))
        config = _grid_config(manifest, template, estimator, strategy)
        out = Path(out_dir)
    except (ConfigError, ParseError) as exc:
        _fail(EXIT_VALIDATION, str(exc))

    try:
        result = ranking_experiment(template, config, n_trials, jobs=jobs)
        rows = [
            [step, _fmt(r.vetted_fraction), _fmt(r.gap_mse), _fmt(r.flip_rate), r.n_excluded]
            for step, r in enumerate(result.steps)
        ]
        _atomic_write(out / "ranking.csv", _csv_text(RANK_HEADER, rows))
        raw = {
            "n_trials": n_trials,
            "trials": [
                [{"gap": gap, "true_gap": true} for gap, true in rows_]
                for rows_ in result.trials
            ],
        }
        _atomic_write(out / "ranking_trials.json", json.dumps(raw, indent=1) + "\n")
        final = result.steps[-1]
        click.echo(
            f"ranking: final flip_rate={final.flip_rate:.4f} gap_mse={final.gap_mse:.6g} "
            f"excluded={final.n_excluded}"
        )
    except ActiveTestError as exc:
        _fail(EXIT_RUNTIME, str(exc))


@main.command("serve")
@click.option("--dataset", "dataset_paths", multiple=True, required=True,
              help="tag dataset file(s) to serve (repeatable)")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8765, show_default=True)
@click.option("--data-dir", default="./vetting-sessions", show_default=True,
              help="directory for session event logs")
def cmd_serve(dataset_paths, host, port, data_dir):
    """Serve the live vetting API over the given datasets."""
    datasets = {}
    try:
        for raw in dataset_paths:
            path = Path(raw)
            if not path.exists():
                raise ConfigError(f"dataset {raw!r} does not exist")
            load_tag_dataset(path)  # validate before binding the port
            datasets[path.stem] = path
    except (ConfigError, ParseError) as exc:
        _fail(EXIT_VALIDATION, str(exc))

    from .service import create_app

    app = create_app(datasets, Path(data_dir))
    import uvicorn

    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit:
        raise
    except OSError as exc:
        _fail(EXIT_RUNTIME, f"cannot bind {host}:{port}: {exc}")


if __name__ == "__main__":
    main()
