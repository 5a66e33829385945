"""Command-line entry point: ingest -> assemble -> split -> train -> eval ->
saliency, plus the grid runner and report renderer."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import torch

from .augment import compile_policy, eval_policy
from .config import ExperimentConfig
from .datasets import DatasetManifest, assemble_corpus, split_train_test
from .evaluate import parameter_gain, predict_batch, score
from .grid import render_report, run_experiment_grid
from .ingest.adapters import MockListingSource
from .ingest.fetch import default_fetcher, download_listing_images, fetch_listing_batch
from .models import ARCHITECTURES, ModelSpec, build_model
from .records import Label, load_records, save_records
from .saliency import render_ranking
from .storage import ImageStore, write_failure_report
from .synthetic import generate_synthetic_corpus
from .training import REGIMEN_KINDS, TrainingRegimen, load_checkpoint, save_checkpoint, save_history, train


@click.group()
@click.option("--out", "out_root", default="runs", show_default=True, help="Output root directory.")
@click.option("--seed", default=0, show_default=True, type=int, help="Root random seed.")
@click.pass_context
def main(ctx, out_root: str, seed: int):
    """Corpus construction and captivity-context classifier experiments."""
    ctx.ensure_object(dict)
    ctx.obj["out_root"] = Path(out_root)
    ctx.obj["seed"] = seed


def _store(ctx) -> ImageStore:
    return ImageStore(ctx.obj["out_root"] / "store")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.pass_context
def ingest(ctx, config_path: str):
    """Fetch marketplace listings declared in the config's sources section."""
    config = ExperimentConfig.from_yaml(config_path)
    marketplace = config.sources.get("marketplace", {})
    fixture = marketplace.get("fixture")
    if not fixture:
        raise click.ClickException("sources.marketplace.fixture (listings JSON) is required")
    adapter = MockListingSource.from_file(fixture)

    store = _store(ctx)
    listings = fetch_listing_batch(adapter)
    records, failures = download_listing_images(listings, store, fetcher=default_fetcher())
    out_dir = ctx.obj["out_root"]
    out_dir.mkdir(parents=True, exist_ok=True)
    save_records(out_dir / "marketplace_records.ndjson", records)
    write_failure_report(out_dir / "marketplace_failures.ndjson", failures)
    click.echo(f"ingested {len(records)} images from {len(listings)} listings; {len(failures)} failures")


@main.command()
@click.option("--positive", required=True, type=click.Path(exists=True), help="Positive records NDJSON.")
@click.option("--negative", required=True, type=click.Path(exists=True), help="Wild-negative records NDJSON.")
@click.option("--background", type=click.Path(exists=True), help="Background-negative records NDJSON.")
@click.option("--name", default="corpus", show_default=True)
@click.pass_context
def assemble(ctx, positive, negative, background, name):
    """Combine record groups into a named dataset manifest."""
    pos = load_records(positive)
    neg = load_records(negative)
    bg = load_records(background) if background else None
    manifest = assemble_corpus(pos, neg, bg, name=name, seed=ctx.obj["seed"])
    path = ctx.obj["out_root"] / "manifests" / f"{name}.ndjson"
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(path)
    click.echo(f"wrote {path} ({len(manifest)} records, counts {manifest.class_counts})")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--ratio", default=0.8, show_default=True, type=float)
@click.pass_context
def split(ctx, manifest_path, ratio):
    """80/20-style stratified train / test_in split."""
    manifest = DatasetManifest.load(manifest_path)
    assignment = split_train_test(manifest, ratio=ratio, seed=ctx.obj["seed"])
    out_dir = Path(manifest_path).parent
    for part in (assignment.train, assignment.test_in):
        part.save(out_dir / f"{part.name}.ndjson")
        click.echo(f"wrote {out_dir / (part.name + '.ndjson')} ({len(part)} records)")


@main.command()
@click.option("--n", "n_per_class", default=100, show_default=True, type=int)
@click.option("--ood", "ood_shift", is_flag=True, help="Shift texture statistics.")
@click.option("--name", default=None)
@click.pass_context
def synth(ctx, n_per_class, ood_shift, name):
    """Generate a synthetic corpus manifest (plus images in the store)."""
    store = _store(ctx)
    manifest = generate_synthetic_corpus(
        n_per_class, store, ood_shift=ood_shift, seed=ctx.obj["seed"], name=name
    )
    path = ctx.obj["out_root"] / "manifests" / f"{manifest.name}.ndjson"
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest.save(path)
    click.echo(f"wrote {path} ({len(manifest)} records)")


@main.command(name="train")
@click.option("--arch", required=True, type=click.Choice(ARCHITECTURES))
@click.option("--regimen", "regimen_kind", required=True, type=click.Choice(REGIMEN_KINDS))
@click.option("--data", "train_path", required=True, type=click.Path(exists=True))
@click.option("--val", "val_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.pass_context
def train_cmd(ctx, arch, regimen_kind, train_path, val_path, config_path):
    """Train one model under one regimen."""
    augment_cfg, training_cfg = {}, {}
    if config_path:
        config = ExperimentConfig.from_yaml(config_path)
        augment_cfg, training_cfg = config.augment, config.training
    seed = ctx.obj["seed"]
    torch.manual_seed(seed)

    train_manifest = DatasetManifest.load(train_path)
    val_manifest = DatasetManifest.load(val_path)
    store = _store(ctx)
    spec = ModelSpec(architecture=arch, pretrained=regimen_kind != "scratch")
    model = build_model(spec)
    regimen = TrainingRegimen.make(regimen_kind, seed=seed, **training_cfg)
    policies = {label: compile_policy(label, augment_cfg) for label in Label}

    result = train(model, regimen, train_manifest, val_manifest, store, policies)
    model.load_state_dict(result.best_checkpoint)
    out_dir = ctx.obj["out_root"] / "models" / f"{arch}_{regimen_kind}_{train_manifest.name}"
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.pt", result, spec, regimen,
                    train_manifest.name, val_manifest.name, policies)
    save_history(out_dir / "history.ndjson", result)
    best = result.history[result.best_epoch - 1]
    click.echo(
        f"trained {arch}/{regimen_kind}: best epoch {result.best_epoch} "
        f"(val loss {best.val_loss:.4f}, val acc {best.val_accuracy:.3f}); saved to {out_dir}"
    )


@main.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.pass_context
def eval_cmd(ctx, checkpoint_path, data_path):
    """Evaluate a checkpoint on a manifest; writes a report JSON."""
    model, payload = load_checkpoint(checkpoint_path)
    manifest = DatasetManifest.load(data_path)
    store = _store(ctx)
    pol = payload["policies"]["positive"]
    policy = eval_policy(target_size=tuple(pol["target_size"]),
                         normalization=(tuple(pol["normalization"]["mean"]),
                                        tuple(pol["normalization"]["std"])))
    preds, skipped = predict_batch(model, manifest, store, policy=policy)
    labels = {row.record_id: row.label for row in manifest.rows}
    report = score(preds, labels, model_id=payload["spec"]["architecture"],
                   test_set=manifest.name, skipped=skipped)
    out = Path(checkpoint_path).parent / f"report_{manifest.name}.json"
    report.save(out)
    click.echo(f"{manifest.name}: f-score {report.f_score:.4f}, accuracy {report.accuracy:.2f} -> {out}")


@main.command()
@click.option("--reports", "reports_dir", required=True, type=click.Path(exists=True),
              help="Directory of cell dirs containing cell.json summaries.")
@click.option("--baseline", default="squeezenet", show_default=True)
@click.option("--test-set", default="test_in", show_default=True)
def gain(reports_dir, baseline, test_set):
    """Per-parameter f-score gain over a named baseline model."""
    cells = []
    for cell_json in sorted(Path(reports_dir).glob("*/cell.json")):
        cells.append(json.loads(cell_json.read_text()))
    base = [c for c in cells if c["architecture"] == baseline]
    if not base:
        raise click.ClickException(f"no cell with architecture {baseline!r} under {reports_dir}")
    base = base[0]
    for c in cells:
        if c["parameter_count"] == base["parameter_count"]:
            continue
        g = parameter_gain(
            (c["metrics"][test_set]["f_score"], c["parameter_count"]),
            (base["metrics"][test_set]["f_score"], base["parameter_count"]),
            model_id=c["cell_id"], baseline_id=base["cell_id"],
        )
        click.echo(f"{c['cell_id']}: gain {g.gain:.3e}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--class", "target_class", default="positive", show_default=True,
              type=click.Choice(["positive", "negative"]))
@click.option("--top", "k", default=10, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def saliency(ctx, checkpoint_path, data_path, target_class, k, out_dir):
    """Saliency overlays for the k highest-activation images of a class."""
    model, payload = load_checkpoint(checkpoint_path)
    manifest = DatasetManifest.load(data_path)
    store = _store(ctx)
    pol = payload["policies"]["positive"]
    policy = eval_policy(target_size=tuple(pol["target_size"]),
                         normalization=(tuple(pol["normalization"]["mean"]),
                                        tuple(pol["normalization"]["std"])))
    index = render_ranking(model, manifest, store, Label(target_class), out_dir, k=k, policy=policy)
    click.echo(f"wrote overlays and ranking index to {index.parent}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.pass_context
def grid(ctx, config_path):
    """Run the full experiment grid declared in the config."""
    config = ExperimentConfig.from_yaml(config_path)
    if ctx.obj.get("seed"):
        config.seed = ctx.obj["seed"]
    config.output_root = str(ctx.obj["out_root"])
    summary = run_experiment_grid(config)
    click.echo(f"executed {summary['executed']} cells; failed: {summary['failed'] or 'none'}")
    if summary["failed"]:
        sys.exit(1)


@main.command()
@click.argument("run_name")
@click.pass_context
def report(ctx, run_name):
    """Render tables and the gain chart for a completed run."""
    path = render_report(run_name, output_root=str(ctx.obj["out_root"]))
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
