"""Grid runner: (dataset x architecture x regimen) cells over the synthetic
corpus, with resumable cells and a final summary.

The published experiments ran on a private scraped corpus; the runner
reproduces the full workflow (assemble, split, train, evaluate on one
in-distribution and two out-of-distribution test sets) on procedurally
generated data so every stage is executable and testable end to end.
"""

from __future__ import annotations

import json
import logging
import traceback
from dataclasses import asdict
from pathlib import Path

import torch

from .augment import compile_policy
from .config import ExperimentConfig, GridCell, derive_cell_seed
from .datasets import DatasetManifest, assemble_corpus, split_train_test
from .evaluate import EvalReport, aggregate, parameter_gain, predict_batch, score
from .models import ModelSpec, build_model
from .records import Label
from .storage import ImageStore
from .synthetic import generate_records
from .training import TrainingRegimen, save_checkpoint, save_history, train

log = logging.getLogger(__name__)

TEST_SETS = ("test_in", "test_out", "test_out_shift")


def _run_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_root) / config.run_name


def _deterministic_stamp(config: ExperimentConfig, name: str) -> str:
    # manifests must be byte-identical across reruns; wall-clock time lives
    # in run_meta.json instead
    return f"run:{config.run_name}:seed:{config.seed}:{name}"


def build_run_datasets(config: ExperimentConfig, store: ImageStore, out_dir: Path) -> dict[str, DatasetManifest]:
    """Corpora and shared test sets; written under out_dir/manifests."""
    syn = config.synthetic
    n = syn["n_per_class"]
    n_bg = syn["n_background"]
    n_test = syn["n_test"]
    size = syn["image_size"]
    seed = config.seed

    pos, wild, bg = generate_records(
        store, n, n, n_bg, ood_shift=False, seed=seed, size=size, tag=f"{config.run_name}-train"
    )
    manifests: dict[str, DatasetManifest] = {}
    manifests["data_no_bg"] = assemble_corpus(
        pos, wild, None, name="data_no_bg", seed=seed,
        created_at=_deterministic_stamp(config, "data_no_bg"),
    )
    manifests["data_bg"] = assemble_corpus(
        pos, wild[: max(0, n - n_bg)], bg, name="data_bg", seed=seed,
        created_at=_deterministic_stamp(config, "data_bg"),
    )

    # out-of-distribution sets: fresh draws, negatives half wild / half
    # background-only, the second set with shifted texture statistics
    for name, shift in (("test_out", False), ("test_out_shift", True)):
        t_pos, t_wild, t_bg = generate_records(
            store, n_test, n_test - n_test // 2, n_test // 2,
            ood_shift=shift, seed=seed + 1, size=size, tag=f"{config.run_name}-{name}",
        )
        manifests[name] = assemble_corpus(
            t_pos, t_wild, t_bg, name=name, seed=seed,
            created_at=_deterministic_stamp(config, name),
        )

    manifest_dir = out_dir / "manifests"
    manifest_dir.mkdir(parents=True, exist_ok=True)
    for m in manifests.values():
        m.save(manifest_dir / f"{m.name}.ndjson")
    return manifests


def run_cell(
    cell: GridCell,
    config: ExperimentConfig,
    manifests: dict[str, DatasetManifest],
    store: ImageStore,
    cell_dir: Path,
) -> dict:
    cell_dir.mkdir(parents=True, exist_ok=True)
    seed = derive_cell_seed(config.seed, cell.cell_id)
    torch.manual_seed(seed)

    corpus = manifests[cell.dataset]
    split = split_train_test(
        corpus, ratio=0.8, seed=config.seed,
        created_at=_deterministic_stamp(config, f"{cell.dataset}-split"),
    )
    split.train.save(cell_dir / "train.ndjson")
    split.test_in.save(cell_dir / "test_in.ndjson")

    pretrained = cell.regimen != "scratch"
    spec = ModelSpec(architecture=cell.architecture, pretrained=pretrained)
    model = build_model(spec)
    regimen = TrainingRegimen.make(cell.regimen, seed=seed, **config.training)
    policies = {label: compile_policy(label, config.augment) for label in Label}

    result = train(model, regimen, split.train, split.test_in, store, policies)
    model.load_state_dict(result.best_checkpoint)
    save_checkpoint(
        cell_dir / "checkpoint.pt", result, spec, regimen,
        split.train.name, split.test_in.name, policies,
    )
    save_history(cell_dir / "history.ndjson", result)

    eval_sets = {"test_in": split.test_in, "test_out": manifests["test_out"],
                 "test_out_shift": manifests["test_out_shift"]}
    metrics = {}
    target = tuple(policies[Label.POSITIVE].target_size)
    from .augment import eval_policy

    policy = eval_policy(target_size=target, normalization=policies[Label.POSITIVE].normalization)
    for name, manifest in eval_sets.items():
        preds, skipped = predict_batch(model, manifest, store, policy=policy)
        labels = {row.record_id: row.label for row in manifest.rows}
        report = score(preds, labels, model_id=cell.cell_id, test_set=name, skipped=skipped)
        report.save(cell_dir / f"report_{name}.json")
        metrics[name] = {
            "f_score": report.f_score, "accuracy": report.accuracy,
            "precision_pos": report.precision_pos, "recall_pos": report.recall_pos,
        }

    summary = {
        "cell_id": cell.cell_id,
        "dataset": cell.dataset,
        "architecture": cell.architecture,
        "regimen": cell.regimen,
        "seed": seed,
        "parameter_count": spec.parameter_count,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "epoch1_train_loss": result.history[0].train_loss,
        "metrics": metrics,
        "status": "ok",
    }
    (cell_dir / "cell.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def run_experiment_grid(config: ExperimentConfig) -> dict:
    """Execute every declared cell; completed cells are skipped on rerun."""
    out_dir = _run_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))

    store = ImageStore(out_dir / "store")
    manifests = build_run_datasets(config, store, out_dir)

    cells = config.cells()
    summaries = []
    executed = 0
    for cell in cells:
        cell_dir = out_dir / "cells" / cell.cell_id
        marker = cell_dir / "cell.json"
        if marker.exists():
            log.info("cell %s already complete, skipping", cell.cell_id)
            summaries.append(json.loads(marker.read_text()))
            continue
        try:
            summaries.append(run_cell(cell, config, manifests, store, cell_dir))
            executed += 1
        except Exception as exc:
            log.error("cell %s failed: %s", cell.cell_id, exc)
            summaries.append({
                "cell_id": cell.cell_id, "dataset": cell.dataset,
                "architecture": cell.architecture, "regimen": cell.regimen,
                "status": "failed", "error": str(exc),
                "traceback": traceback.format_exc(),
            })

    run_summary = {
        "run_name": config.run_name,
        "seed": config.seed,
        "cells": summaries,
        "executed": executed,
        "failed": [s["cell_id"] for s in summaries if s.get("status") != "ok"],
    }
    (out_dir / "summary.json").write_text(json.dumps(run_summary, indent=2, sort_keys=True))
    return run_summary


def _fmt(x: float) -> str:
    return f"{x:.4f}" if isinstance(x, float) else str(x)


def render_report(run_name: str, output_root: str = "runs") -> Path:
    """Metric tables, aggregate lines, positive-precision table, gain chart."""
    out_dir = Path(output_root) / run_name
    summary_path = out_dir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"no summary for run {run_name} under {output_root}")
    summary = json.loads(summary_path.read_text())
    ok_cells = [c for c in summary["cells"] if c.get("status") == "ok"]
    warnings = [c["cell_id"] for c in summary["cells"] if c.get("status") != "ok"]

    lines = [f"# Run report: {run_name}", ""]
    if warnings:
        lines += ["> WARNING: failed cells: " + ", ".join(warnings), ""]

    for test_set in TEST_SETS:
        lines += [f"## Metrics on {test_set}", "",
                  "| model | f-score | accuracy | precision (positive) | recall (positive) |",
                  "|---|---|---|---|---|"]
        reports = []
        for c in ok_cells:
            m = c["metrics"].get(test_set)
            if m is None:
                continue
            lines.append(
                f"| {c['cell_id']} | {_fmt(m['f_score'])} | {m['accuracy']:.2f} "
                f"| {_fmt(m['precision_pos'])} | {_fmt(m['recall_pos'])} |"
            )
            report_path = out_dir / "cells" / c["cell_id"] / f"report_{test_set}.json"
            if report_path.exists():
                reports.append(EvalReport.load(report_path))
        if reports:
            agg = aggregate(reports)
            flag = " (single report, s.d. not meaningful)" if agg.single_report else ""
            lines += ["",
                      f"f-score mean: {agg.mean['f_score']:.2f}, s.d.: {agg.std['f_score']:.2f}; "
                      f"accuracy mean {agg.mean['accuracy']:.2f}, s.d.: {agg.std['accuracy']:.2f}{flag}",
                      ""]

    lines += ["## Precision for positive class", "",
              "| model | test_out | test_out_shift |", "|---|---|---|"]
    for c in ok_cells:
        p1 = c["metrics"].get("test_out", {}).get("precision_pos")
        p2 = c["metrics"].get("test_out_shift", {}).get("precision_pos")
        if p1 is not None and p2 is not None:
            lines.append(f"| {c['cell_id']} | {p1:.2f} | {p2:.2f} |")

    # gain over the smallest model on the in-distribution test set
    if len(ok_cells) > 1:
        baseline = min(ok_cells, key=lambda c: c["parameter_count"])
        gains = []
        for c in ok_cells:
            if c["parameter_count"] == baseline["parameter_count"]:
                continue
            g = parameter_gain(
                (c["metrics"]["test_in"]["f_score"], c["parameter_count"]),
                (baseline["metrics"]["test_in"]["f_score"], baseline["parameter_count"]),
                model_id=c["cell_id"], baseline_id=baseline["cell_id"],
            )
            gains.append(g)
        if gains:
            lines += ["", f"## Gain over baseline {baseline['cell_id']}", "",
                      "| model | gain (f-score per parameter) |", "|---|---|"]
            for g in sorted(gains, key=lambda g: -g.gain):
                lines.append(f"| {g.model_id} | {g.gain:.3e} |")
            _render_gain_chart(gains, out_dir / "gain_chart.png")

    report_path = out_dir / "report.md"
    report_path.write_text("\n".join(lines) + "\n")
    return report_path


def _render_gain_chart(gains, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = [g.model_id for g in gains]
    ax.bar(names, [g.gain for g in gains], color="#4477aa")
    ax.set_ylabel("gain (f-score / parameter)")
    ax.set_title(f"Gain over {gains[0].baseline_id}")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
