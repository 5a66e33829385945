"""Training regimens, early stopping, schedule control, checkpoints."""

import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from cagewatch.augment import compile_policy
from cagewatch.datasets import split_train_test
from cagewatch.models import ModelSpec, build_model, backbone_hash
from cagewatch.records import Label
from cagewatch.synthetic import generate_synthetic_corpus
from cagewatch.training import (
    ManifestData,
    TrainingRegimen,
    early_stop_check,
    evaluate_loss,
    load_checkpoint,
    run_schedule,
    save_checkpoint,
    save_history,
    train,
)

SMALL_AUGMENT = {
    "watermark_removal": False,
    "rotation_degrees": 0,
    "random_crop_scale": (0.8, 1.0),
    "flip_p": 0.5,
    "target_size": (64, 64),
}


def policies():
    return {label: compile_policy(label, SMALL_AUGMENT) for label in Label}


def eval_only_policy():
    from cagewatch.augment import eval_policy

    return eval_policy(target_size=(64, 64))


class TestRegimen:
    def test_fine_tune_defaults(self):
        r = TrainingRegimen.make("fine_tune")
        assert r.patience == 15
        assert r.learning_rate_head == 1e-3
        assert r.batch_size_head == 75

    def test_combi_defaults(self):
        r = TrainingRegimen.make("combi")
        assert r.patience == 35
        assert r.head_only_epochs == 10
        assert r.learning_rate_full < r.learning_rate_head
        assert r.batch_size_full < r.batch_size_head
        assert (r.batch_size_head, r.batch_size_full) == (75, 15)

    def test_scratch_defaults(self):
        r = TrainingRegimen.make("scratch")
        assert r.patience == 15
        assert r.phase_for_epoch(1) == "full"

    def test_combi_phase_schedule(self):
        r = TrainingRegimen.make("combi")
        assert [r.phase_for_epoch(e) for e in (1, 5, 10)] == ["head_only"] * 3
        assert [r.phase_for_epoch(e) for e in (11, 50)] == ["full"] * 2

    def test_invalid_combi_rates_rejected(self):
        with pytest.raises(ValueError):
            TrainingRegimen.make("combi", learning_rate_full=1e-2)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            TrainingRegimen.make("transfer")


class TestEarlyStopCheck:
    def test_single_epoch_false(self):
        assert early_stop_check([0.5], 15) is False

    def test_monotone_decrease_never_stops(self):
        losses = [1.0 - 0.01 * i for i in range(60)]
        assert early_stop_check(losses, 15) is False

    def test_best_at_4_fires_at_19(self):
        losses = [1.0, 0.9, 0.8, 0.5] + [0.5] * 15  # best at epoch 4
        assert early_stop_check(losses[:18], 15) is False
        assert early_stop_check(losses[:19], 15) is True

    def test_strict_improvement_required(self):
        # An equal loss does not reset the counter.
        assert early_stop_check([0.5, 0.5, 0.5, 0.5], 3) is True

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            early_stop_check([], 15)

    @settings(max_examples=50, deadline=None)
    @given(
        losses=st.lists(st.floats(0.01, 10.0, allow_nan=False), min_size=1, max_size=40),
        patience=st.integers(1, 20),
    )
    def test_matches_counter_oracle(self, losses, patience):
        best = min(range(len(losses)), key=lambda i: (losses[i], i))
        expected = (len(losses) - 1 - best) >= patience
        assert early_stop_check(losses, patience) is expected


def scripted_schedule(regimen, val_losses, phases_log=None, configure_log=None):
    """Drive run_schedule from a fixed validation-loss script."""

    def train_epoch(epoch, phase):
        if phases_log is not None:
            phases_log.append((epoch, phase))
        return 1.0 / epoch

    def validate(epoch):
        return val_losses[epoch - 1], 0.5

    def configure_phase(phase):
        if configure_log is not None:
            configure_log.append(phase)

    def snapshot():
        return {"marker": len(phases_log or [])}

    return run_schedule(regimen, train_epoch, validate,
                        configure_phase=configure_phase, snapshot=snapshot)


class TestRunSchedule:
    def test_scripted_patience_3(self):
        regimen = TrainingRegimen.make("fine_tune", patience=3, max_epochs=50)
        result = scripted_schedule(regimen, [1.0, 0.9, 0.95, 0.95, 0.95, 0.94])
        assert len(result.history) == 5  # stops after epoch 5
        assert result.best_epoch == 2
        assert result.stopped_early is True

    def test_combi_single_phase_transition(self):
        regimen = TrainingRegimen.make("combi", patience=5, max_epochs=30)
        losses = [1.0 - 0.01 * i for i in range(14)] + [2.0] * 16
        phases, configured = [], []
        result = scripted_schedule(regimen, losses, phases, configured)
        head = [e for e, p in phases if p == "head_only"]
        full = [e for e, p in phases if p == "full"]
        assert head == list(range(1, 11))
        assert min(full) == 11
        assert configured == ["head_only", "full"]
        tags = [r.phase for r in result.history]
        transitions = sum(1 for a, b in zip(tags, tags[1:]) if a != b)
        assert transitions == 1

    def test_fine_tune_never_transitions(self):
        regimen = TrainingRegimen.make("fine_tune", patience=2, max_epochs=10)
        phases, configured = [], []
        scripted_schedule(regimen, [1.0] + [1.0] * 9, phases, configured)
        assert configured == ["head_only"]

    def test_max_epochs_cap(self):
        regimen = TrainingRegimen.make("fine_tune", patience=50, max_epochs=7)
        result = scripted_schedule(regimen, [1.0 - 0.01 * i for i in range(7)])
        assert len(result.history) == 7
        assert result.stopped_early is False

    def test_non_finite_loss_aborts(self):
        regimen = TrainingRegimen.make("fine_tune", patience=3, max_epochs=10)
        with pytest.raises(RuntimeError, match="non-finite"):
            run_schedule(regimen, lambda e, p: float("nan"), lambda e: (1.0, 0.5))

    def test_snapshot_tracks_best(self):
        regimen = TrainingRegimen.make("fine_tune", patience=2, max_epochs=10)
        phases = []
        result = scripted_schedule(regimen, [1.0, 0.7, 0.9, 0.9, 0.9], phases)
        # snapshot captured right after epoch 2 finished training
        assert result.best_checkpoint == {"marker": 2}


@pytest.fixture(scope="module")
def small_split(tmp_path_factory):
    from cagewatch.storage import ImageStore

    store = ImageStore(tmp_path_factory.mktemp("synthstore"))
    manifest = generate_synthetic_corpus(40, store, seed=5, created_at="2024-01-01T00:00:00+00:00")
    split = split_train_test(manifest, ratio=0.8, seed=5)
    return store, split


class TestTrain:
    def test_fine_tune_separable_dataset(self, small_split):
        store, split = small_split
        spec = ModelSpec("tinynet", pretrained=True)
        model = build_model(spec)
        regimen = TrainingRegimen.make(
            "fine_tune", seed=1, patience=15, max_epochs=40, batch_size_head=32,
            learning_rate_head=5e-2,
        )
        result = train(model, regimen, split.train, split.test_in, store, policies())
        assert result.stopped_early is True
        assert result.history[result.best_epoch - 1].val_accuracy >= 0.95
        # checkpoint optimality: reloading the snapshot reproduces the best loss
        model.load_state_dict(result.best_checkpoint)
        val_data = ManifestData(split.test_in, store)
        loss, _ = evaluate_loss(model, val_data, eval_only_policy())
        assert abs(loss - result.best_val_loss) < 1e-5
        assert result.best_val_loss == min(r.val_loss for r in result.history)

    def test_initial_val_loss_near_ln2(self, small_split):
        store, split = small_split
        model = build_model(ModelSpec("tinynet", pretrained=True))
        loss, acc = evaluate_loss(model, ManifestData(split.test_in, store), eval_only_policy())
        assert abs(loss - math.log(2)) < 0.15

    def test_epoch1_loss_reproducible(self, small_split):
        store, split = small_split
        losses = []
        for _ in range(2):
            torch.manual_seed(0)  # identical head init across the two runs
            model = build_model(ModelSpec("tinynet", pretrained=True))
            regimen = TrainingRegimen.make("fine_tune", seed=3, max_epochs=1,
                                           batch_size_head=32)
            result = train(model, regimen, split.train, split.test_in, store, policies())
            losses.append(result.history[0].train_loss)
        assert abs(losses[0] - losses[1]) < 1e-6

    def test_fine_tune_backbone_frozen_through_training(self, small_split):
        store, split = small_split
        model = build_model(ModelSpec("tinynet", pretrained=True))
        before = backbone_hash(model)
        regimen = TrainingRegimen.make("fine_tune", seed=1, max_epochs=2, batch_size_head=32)
        train(model, regimen, split.train, split.test_in, store, policies())
        assert backbone_hash(model) == before

    def test_empty_train_manifest_rejected(self, small_split):
        store, split = small_split
        from cagewatch.datasets import DatasetManifest

        empty = DatasetManifest.create("empty", [], created_at="2024-01-01T00:00:00+00:00")
        model = build_model(ModelSpec("tinynet", pretrained=True))
        with pytest.raises(ValueError):
            train(model, TrainingRegimen.make("fine_tune"), empty, split.test_in,
                  store, policies())


class TestCheckpointIO:
    def test_round_trip(self, small_split, tmp_path):
        store, split = small_split
        spec = ModelSpec("tinynet", pretrained=True)
        model = build_model(spec)
        regimen = TrainingRegimen.make("fine_tune", seed=2, max_epochs=2, batch_size_head=32)
        pol = policies()
        result = train(model, regimen, split.train, split.test_in, store, pol)
        path = tmp_path / "checkpoint.pt"
        save_checkpoint(path, result, spec, regimen, "train", "val", pol)
        loaded, payload = load_checkpoint(path)
        assert payload["best_epoch"] == result.best_epoch
        assert payload["train_manifest"] == "train"
        assert payload["policies"]["positive"]["target_size"] == [64, 64]
        model.load_state_dict(result.best_checkpoint)
        for a, b in zip(model.state_dict().values(), loaded.state_dict().values()):
            assert torch.equal(a, b)

    def test_history_file(self, tmp_path):
        regimen = TrainingRegimen.make("fine_tune", patience=2, max_epochs=10)
        result = scripted_schedule(regimen, [1.0, 0.9, 0.95, 0.95, 0.95], [])
        path = tmp_path / "history.ndjson"
        save_history(path, result)
        import json

        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert [l["epoch"] for l in lines] == [1, 2, 3, 4]
        assert all(set(l) == {"epoch", "phase", "train_loss", "val_loss", "val_accuracy"}
                   for l in lines)
