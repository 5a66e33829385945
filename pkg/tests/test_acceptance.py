"""Acceptance suite: one test per acceptance criterion.

Each test prints a single PASS line on success (visible with ``pytest -s``
or in the captured output); a pytest failure is the FAIL line.
"""

import json
import math
import random
import time

import numpy as np
import pytest
import torch

from cagewatch.augment import compile_policy, eval_policy
from cagewatch.config import ExperimentConfig
from cagewatch.datasets import assemble_corpus, build_ood_testsets, split_train_test
from cagewatch.evaluate import Prediction, aggregate, parameter_gain, predict_batch, score
from cagewatch.grid import run_experiment_grid
from cagewatch.ingest.taxonomy import load_default_taxonomy, tokenize
from cagewatch.models import ModelSpec, backbone_hash, build_model
from cagewatch.records import Label, SourceKind
from cagewatch.storage import ImageStore
from cagewatch.synthetic import generate_records
from cagewatch.training import TrainingRegimen, run_schedule, train

from .conftest import fake_record

P, N = Label.POSITIVE, Label.NEGATIVE
STAMP = "2024-01-01T00:00:00+00:00"


def _ok(n, text):
    print(f"PASS criterion {n}: {text}")


# --------------------------------------------------------------------------
# 1. Metric oracle suite: exact agreement on 1,000 randomized cases;
#    aggregate mean/s.d. within 1e-12 of a two-pass reference; < 10 s.
# --------------------------------------------------------------------------
def test_criterion_1_metric_oracle_suite():
    started = time.monotonic()
    rng = random.Random(90210)
    reports = []
    for _ in range(1000):
        n = rng.randint(1, 200)
        pairs = [(rng.choice((P, N)), rng.choice((P, N))) for _ in range(n)]
        preds = [Prediction(f"r{i}", p, 0.5) for i, (p, _) in enumerate(pairs)]
        labels = {f"r{i}": t for i, (_, t) in enumerate(pairs)}
        report = score(preds, labels, test_set="oracle")

        tp = sum(1 for p, t in pairs if p is P and t is P)
        fp = sum(1 for p, t in pairs if p is P and t is N)
        fn = sum(1 for p, t in pairs if p is N and t is P)
        tn = sum(1 for p, t in pairs if p is N and t is N)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        cm = report.confusion
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (tp, fp, fn, tn)
        assert report.accuracy == 100.0 * (tp + tn) / n
        assert report.precision_pos == prec
        assert report.recall_pos == rec
        assert report.f_score == f
        reports.append(report)

    summary = aggregate(reports)
    for metric in ("accuracy", "f_score", "precision_pos", "recall_pos"):
        values = [getattr(r, metric) for r in reports]
        mean = sum(values) / len(values)
        sd = math.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1))
        assert abs(summary.mean[metric] - mean) < 1e-12
        assert abs(summary.std[metric] - sd) < 1e-12

    elapsed = time.monotonic() - started
    assert elapsed < 10.0
    _ok(1, f"score()/aggregate() match loop oracle on 1000 cases in {elapsed:.2f} s")


# --------------------------------------------------------------------------
# 2. Gain reproduction: densenet121 beats vgg19 on f-score gain per
#    parameter over the instantiated squeezenet baseline. Exact inequality.
# --------------------------------------------------------------------------
def test_criterion_2_gain_reproduction():
    spec = ModelSpec("squeezenet", pretrained=False)
    build_model(spec)
    baseline = (0.63, spec.parameter_count)
    dense = parameter_gain((0.95, 6_955_906), baseline, model_id="densenet121")
    vgg = parameter_gain((0.96, 139_589_442), baseline, model_id="vgg19")
    assert dense.gain > vgg.gain
    _ok(2, f"gain(densenet121)={dense.gain:.3e} > gain(vgg19)={vgg.gain:.3e} "
           f"over squeezenet baseline ({spec.parameter_count} params)")


# --------------------------------------------------------------------------
# 3. Dataset arithmetic: manifests of 5556 / 6261 / 1248 / 1246 and the
#    0.8 split of 5556 into 4444 / 1112. Exact.
# --------------------------------------------------------------------------
def test_criterion_3_dataset_arithmetic():
    pos = [fake_record(f"p/{i}", P, source=SourceKind.MARKETPLACE) for i in range(3051)]
    wild = [fake_record(f"w/{i}", N) for i in range(2505)]
    bg = [fake_record(f"b/{i}", N) for i in range(705)]

    data_no_bg = assemble_corpus(pos, wild, None, name="data_no_bg",
                                 created_at=STAMP, seed=0)
    data_bg = assemble_corpus(pos, wild, bg, name="data_bg", created_at=STAMP, seed=0)
    assert len(data_no_bg) == 5556
    assert len(data_bg) == 6261

    taxonomy = load_default_taxonomy()
    holdout = [fake_record(f"h/{i}", P, source=SourceKind.MARKETPLACE) for i in range(250)]
    general = [fake_record(f"g/{i}", N, caption=f"scene number {i}",
                           source=SourceKind.CAPTIONED_CORPUS) for i in range(996)]
    general.insert(40, fake_record("g/dog", N, caption="a stray dog",
                                   source=SourceKind.CAPTIONED_CORPUS))
    general.insert(800, fake_record("g/cats", N, caption="two cats asleep",
                                    source=SourceKind.CAPTIONED_CORPUS))
    pet, nopet = build_ood_testsets(holdout, general, "animal.n", taxonomy,
                                    training_manifests=[data_no_bg, data_bg],
                                    created_at=STAMP, seed=0)
    assert len(pet) == 1248
    assert len(nopet) == 1246

    split = split_train_test(data_no_bg, ratio=0.8, seed=7)
    assert len(split.train) == 4444
    assert len(split.test_in) == 1112
    assert split.train.class_counts == {"positive": 2440, "negative": 2004}
    _ok(3, "manifests 5556/6261/1248/1246 and split 4444/1112 reproduced exactly")


# --------------------------------------------------------------------------
# 4. Regimen schedule invariants: combi freezes the backbone through epoch
#    10 with exactly one phase transition; scripted early stopping fires at
#    best_epoch + patience for patience in {3, 15, 35}. Exact.
# --------------------------------------------------------------------------
def test_criterion_4_regimen_schedule(tmp_path):
    # scripted-loss early stopping for the three patience settings
    for patience in (3, 15, 35):
        best_epoch = 4
        losses = [1.0 - 0.1 * e for e in range(best_epoch)] + [2.0] * (patience + 5)
        regimen = TrainingRegimen.make("combi", patience=patience, max_epochs=100)
        result = run_schedule(regimen, lambda e, p: 0.5,
                              lambda e: (losses[e - 1], 0.5))
        assert result.stopped_early is True
        assert result.best_epoch == best_epoch
        assert len(result.history) == best_epoch + patience

    # real combi run on a small synthetic corpus: backbone frozen through
    # epoch 10, exactly one phase transition at epoch 11
    store = ImageStore(tmp_path / "store")
    pos, wild, _ = generate_records(store, 16, 16, 0, seed=3, size=32)
    corpus = assemble_corpus(pos, wild, None, name="combi-smoke",
                             created_at=STAMP, seed=3)
    split = split_train_test(corpus, ratio=0.8, seed=3)
    model = build_model(ModelSpec("tinynet", pretrained=True))
    augment = {"watermark_removal": False, "rotation_degrees": 0,
               "random_crop_scale": (0.8, 1.0), "flip_p": 0.5,
               "target_size": (32, 32)}
    policies = {label: compile_policy(label, augment) for label in Label}
    regimen = TrainingRegimen.make("combi", seed=3, max_epochs=12, patience=35,
                                   batch_size_head=16, batch_size_full=8)
    hashes = {}
    result = train(model, regimen, split.train, split.test_in, store, policies,
                   on_epoch_end=lambda r: hashes.update({r.epoch: backbone_hash(model)}))
    assert len(result.history) == 12
    tags = [r.phase for r in result.history]
    assert tags == ["head_only"] * 10 + ["full"] * 2
    assert sum(1 for a, b in zip(tags, tags[1:]) if a != b) == 1
    assert len({hashes[e] for e in range(1, 11)}) == 1  # frozen through epoch 10
    assert hashes[12] != hashes[10]
    _ok(4, "combi backbone frozen through epoch 10, one phase transition; "
           "scripted early stop exact for patience 3/15/35")


# --------------------------------------------------------------------------
# 5. Saliency gradient fidelity: backprop matches central finite differences
#    within 1e-4 relative on a float64 toy model, 20 pixels x 10 images; < 30 s.
# --------------------------------------------------------------------------
def test_criterion_5_saliency_gradient_fidelity():
    started = time.monotonic()
    torch.manual_seed(11)
    lin1 = torch.nn.Linear(12 * 12 * 3, 8).double()
    lin2 = torch.nn.Linear(8, 2).double()

    def forward(x):
        return lin2(torch.tanh(lin1(x.reshape(x.shape[0], -1))))

    rng = np.random.default_rng(13)
    eps = 1e-4
    for image_idx in range(10):
        arr = rng.random((3, 12, 12))
        x = torch.tensor(arr[None], requires_grad=True)
        forward(x)[0, 1].backward()
        grad = x.grad[0].numpy()
        for _ in range(20):
            c, i, j = rng.integers(0, 3), rng.integers(0, 12), rng.integers(0, 12)
            hi, lo = arr.copy(), arr.copy()
            hi[c, i, j] += eps
            lo[c, i, j] -= eps
            with torch.no_grad():
                fd = (forward(torch.tensor(hi[None]))[0, 1]
                      - forward(torch.tensor(lo[None]))[0, 1]).item() / (2 * eps)
            denom = max(abs(fd), abs(grad[c, i, j]), 1e-12)
            assert abs(fd - grad[c, i, j]) / denom < 1e-4
    elapsed = time.monotonic() - started
    assert elapsed < 30.0
    _ok(5, f"backprop vs finite differences within 1e-4 rel on 10x20 probes in {elapsed:.2f} s")


# --------------------------------------------------------------------------
# 6. Synthetic directional reproduction: with background negatives in
#    training, the shifted OOD f-score beats the no-background setup by
#    >= 0.03 averaged over 3 seeds; both >= 0.9 in-distribution.
# --------------------------------------------------------------------------
AUGMENT_64 = {"watermark_removal": False, "rotation_degrees": 0,
              "random_crop_scale": (0.8, 1.0), "flip_p": 0.5,
              "target_size": (64, 64)}


def _train_and_score(store, train_manifest, val_manifest, test_sets, seed):
    torch.manual_seed(seed)
    model = build_model(ModelSpec("tinynet", pretrained=True))
    regimen = TrainingRegimen.make("fine_tune", seed=seed, patience=5,
                                   max_epochs=20, batch_size_head=50,
                                   learning_rate_head=5e-2)
    policies = {label: compile_policy(label, AUGMENT_64) for label in Label}
    result = train(model, regimen, train_manifest, val_manifest, store, policies)
    model.load_state_dict(result.best_checkpoint)
    policy = eval_policy(target_size=(64, 64))
    out = {}
    for name, manifest in test_sets.items():
        preds, skipped = predict_batch(model, manifest, store, policy=policy)
        labels = {r.record_id: r.label for r in manifest.rows}
        out[name] = score(preds, labels, test_set=name, skipped=skipped).f_score
    return out


@pytest.mark.slow
def test_criterion_6_synthetic_directional_reproduction(tmp_path):
    started = time.monotonic()
    n, n_bg, n_test = 500, 150, 100
    store = ImageStore(tmp_path / "store")

    pos, wild, bg = generate_records(store, n, n, n_bg, seed=100, size=64)
    data_no_bg = assemble_corpus(pos, wild, None, name="data_no_bg",
                                 created_at=STAMP, seed=100)
    data_bg = assemble_corpus(pos, wild[: n - n_bg], bg, name="data_bg",
                              created_at=STAMP, seed=100)

    t_pos, t_wild, t_bg = generate_records(store, n_test, n_test // 2,
                                           n_test // 2, ood_shift=True,
                                           seed=101, size=64, tag="oodshift")
    test_out_shift = assemble_corpus(t_pos, t_wild, t_bg, name="test_out_shift",
                                     created_at=STAMP, seed=101)

    results = {"data_no_bg": [], "data_bg": []}
    in_dist = {"data_no_bg": [], "data_bg": []}
    for seed in (1, 2, 3):
        for name, corpus in (("data_no_bg", data_no_bg), ("data_bg", data_bg)):
            split = split_train_test(corpus, ratio=0.8, seed=seed)
            scores = _train_and_score(store, split.train, split.test_in,
                                      {"test_in": split.test_in,
                                       "test_out_shift": test_out_shift}, seed)
            results[name].append(scores["test_out_shift"])
            in_dist[name].append(scores["test_in"])

    mean_no_bg = sum(results["data_no_bg"]) / 3
    mean_bg = sum(results["data_bg"]) / 3
    assert min(in_dist["data_no_bg"]) >= 0.9, in_dist
    assert min(in_dist["data_bg"]) >= 0.9, in_dist
    assert mean_bg >= mean_no_bg + 0.03, (results, in_dist)
    elapsed = time.monotonic() - started
    assert elapsed < 7200.0
    _ok(6, f"shifted-OOD f-score with background {mean_bg:.3f} vs without "
           f"{mean_no_bg:.3f} (margin {mean_bg - mean_no_bg:.3f} >= 0.03), "
           f"in-dist all >= 0.9, in {elapsed / 60:.1f} min")


# --------------------------------------------------------------------------
# 7. Caption filter: kept/excluded decisions match a per-token
#    hypernym-closure oracle on 200 captions. Exact.
# --------------------------------------------------------------------------
def test_criterion_7_caption_filter():
    from cagewatch.ingest.taxonomy import caption_excludes_taxon, filter_captioned_corpus

    taxonomy = load_default_taxonomy()
    animal_words = sorted(
        w for w in taxonomy.senses
        if any("animal.n" in taxonomy.closure(s) for s in taxonomy.senses[w])
    )
    other_words = ["street", "car", "lamp", "sunset", "bridge", "market",
                   "sale", "cage", "hands", "garden", "window", "chair"]
    rng = random.Random(777)
    captions = []
    for i in range(200):
        words = rng.sample(other_words, rng.randint(2, 4))
        if i % 3 == 0:
            words.insert(rng.randrange(len(words)), rng.choice(animal_words))
        captions.append(" ".join(words))

    records = [fake_record(f"cap/{i}", N, caption=c,
                           source=SourceKind.CAPTIONED_CORPUS)
               for i, c in enumerate(captions)]
    kept = {r.record_id for r in filter_captioned_corpus(records, "animal.n", taxonomy)}

    def oracle(caption):
        for token in tokenize(caption):
            for sense in taxonomy.lookup(token):
                seen, frontier = {sense}, [sense]
                while frontier:
                    node = frontier.pop()
                    for parent in taxonomy.hypernyms.get(node, ()):
                        if parent not in seen:
                            seen.add(parent)
                            frontier.append(parent)
                if "animal.n" in seen:
                    return False
        return True

    excluded = 0
    for r in records:
        expected = oracle(r.caption)
        assert (r.record_id in kept) == expected
        assert caption_excludes_taxon(r.caption, "animal.n", taxonomy) == expected
        excluded += 0 if expected else 1
    assert excluded > 0 and excluded < len(records)
    _ok(7, f"filter decisions match the per-token oracle on 200 captions "
           f"({excluded} excluded)")


# --------------------------------------------------------------------------
# 8. Determinism: grid rerun with identical config and seeds reproduces
#    byte-equal manifests and epoch-1 train loss within 1e-6.
# --------------------------------------------------------------------------
def test_criterion_8_grid_determinism(tmp_path):
    def config(root):
        return ExperimentConfig.from_dict({
            "run_name": "det",
            "seed": 9,
            "output_root": str(root),
            "synthetic": {"n_per_class": 16, "n_background": 6, "n_test": 8,
                          "image_size": 32},
            "augment": {"watermark_removal": False, "rotation_degrees": 0,
                        "random_crop_scale": (0.8, 1.0), "flip_p": 0.5,
                        "target_size": (32, 32)},
            "training": {"max_epochs": 3, "patience": 2, "batch_size_head": 16,
                         "learning_rate_head": 5e-2},
            "grid": [{"datasets": ["data_bg"], "architectures": ["tinynet"],
                      "regimens": ["fine_tune"]}],
        })

    summaries = []
    for run in ("a", "b"):
        root = tmp_path / run
        summaries.append(run_experiment_grid(config(root)))

    # byte-equal manifests
    for name in ("data_no_bg", "data_bg", "test_out", "test_out_shift"):
        texts = [(tmp_path / run / "det" / "manifests" / f"{name}.ndjson").read_bytes()
                 for run in ("a", "b")]
        assert texts[0] == texts[1], f"manifest {name} differs across reruns"

    losses = []
    for run in ("a", "b"):
        cell = json.loads((tmp_path / run / "det" / "cells" /
                           "data_bg__tinynet__fine_tune" / "cell.json").read_text())
        losses.append(cell["epoch1_train_loss"])
    assert abs(losses[0] - losses[1]) < 1e-6
    _ok(8, f"rerun manifests byte-equal; epoch-1 train loss delta "
           f"{abs(losses[0] - losses[1]):.2e} < 1e-6")
