import math

import numpy as np
import pytest

from sonarcnn.data import AugmentConfig, ImageDataset, synth_generate
from sonarcnn.graph.ir import init_weights
from sonarcnn.graph.serialize import deserialize, serialize
from sonarcnn.train import (TrainConfig, TrainingDiverged, WidthSearchResult, WidthStats, evaluate_accuracy,
                            reconstruction_mse, train_autoencoder, train_classifier, width_search)
from sonarcnn.zoo import ArchSpec, build

FAST = TrainConfig(epochs=3, batch_size=8, augment=None)


@pytest.fixture(scope="module")
def fixture_ds():
    return synth_generate(4, 10, 32, seed=0)


def _resnet(ds, width=4, seed=0):
    return build(ArchSpec("resnet20", width, ds.size, ds.num_classes), seed=seed)


def _same_weights(a, b):
    assert a.keys() == b.keys()
    for name in a:
        for key in a[name]:
            np.testing.assert_array_equal(a[name][key], b[name][key])


def test_zero_epochs_returns_initialisation(fixture_ds):
    graph = _resnet(fixture_ds)
    trained, log = train_classifier(graph, fixture_ds, TrainConfig(epochs=0))
    assert len(log) == 0 and log.to_csv().count("\n") == 1
    _same_weights(trained.weights, graph.weights)


def test_unweighted_graph_is_initialised_from_config_seed(fixture_ds):
    bare = build(ArchSpec("resnet20", 4, 32, 4), seed=None)
    trained, _ = train_classifier(bare, fixture_ds, TrainConfig(epochs=0, seed=5))
    _same_weights(trained.weights, init_weights(bare, 5))


def test_training_is_bitwise_deterministic(fixture_ds):
    cfg = TrainConfig(epochs=2, batch_size=8, augment=AugmentConfig(seed=3), seed=3)
    a, log_a = train_classifier(_resnet(fixture_ds), fixture_ds, cfg)
    b, log_b = train_classifier(_resnet(fixture_ds), fixture_ds, cfg)
    _same_weights(a.weights, b.weights)
    assert log_a.losses == log_b.losses


def test_input_graph_is_not_modified(fixture_ds):
    graph = _resnet(fixture_ds)
    before = serialize(graph)
    train_classifier(graph, fixture_ds, FAST)
    assert serialize(graph) == before


def test_loss_mostly_decreases_over_first_epochs(fixture_ds):
    _, log = train_classifier(_resnet(fixture_ds), fixture_ds,
                              TrainConfig(epochs=6, batch_size=8, augment=None))
    steps = np.diff(log.losses)
    assert len(steps) == 5
    assert (steps < 0).sum() >= 4, log.losses


def test_log_has_one_record_per_epoch(fixture_ds):
    _, log = train_classifier(_resnet(fixture_ds), fixture_ds, FAST, validation=fixture_ds)
    assert [r.epoch for r in log.records] == [1, 2, 3]
    for r in log.records:
        assert 0 <= r.train_accuracy <= 1 and 0 <= r.val_accuracy <= 1 and r.seconds >= 0
    header = log.to_csv().splitlines()[0]
    assert header == "epoch;loss;train_accuracy;val_accuracy"


def test_different_seed_changes_weights_not_structure(fixture_ds):
    a, _ = train_classifier(_resnet(fixture_ds), fixture_ds, TrainConfig(epochs=1, batch_size=8, seed=0))
    b, _ = train_classifier(_resnet(fixture_ds), fixture_ds, TrainConfig(epochs=1, batch_size=8, seed=1))
    assert a.structure_hash() == b.structure_hash()
    assert not np.array_equal(a.weights["dense_1"]["kernel"], b.weights["dense_1"]["kernel"])


def test_class_count_mismatch(fixture_ds):
    graph = build(ArchSpec("resnet20", 4, 32, 12))
    with pytest.raises(ValueError, match="12"):
        train_classifier(graph, fixture_ds, FAST)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_nan_loss_aborts_with_position(fixture_ds):
    graph = _resnet(fixture_ds)
    graph.weights["dense_1"]["kernel"][:] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train_classifier(graph, fixture_ds, FAST)
    assert (info.value.epoch, info.value.batch) == (0, 0)
    assert "epoch 0, batch 0" in str(info.value)


# ---------------------------------------------------------------- evaluation

def test_accuracy_survives_serialization(fixture_ds):
    trained, log = train_classifier(_resnet(fixture_ds), fixture_ds, FAST)
    again = deserialize(serialize(trained))
    assert evaluate_accuracy(again, fixture_ds, log.pixel_mean) == evaluate_accuracy(trained, fixture_ds, log.pixel_mean)


def test_perfect_single_sample(fixture_ds):
    one = fixture_ds.subset([0])
    graph = _resnet(fixture_ds)
    # bias the output layer so the true class wins by a wide margin
    graph.weights["dense_1"]["kernel"][:] = 0
    graph.weights["dense_1"]["bias"][:] = 0
    graph.weights["dense_1"]["bias"][one.labels[0]] = 10
    assert evaluate_accuracy(graph, one, 80.0) == 1.0


def test_ties_go_to_lowest_class(fixture_ds):
    graph = _resnet(fixture_ds)
    graph.weights["dense_1"]["kernel"][:] = 0
    graph.weights["dense_1"]["bias"][:] = 0
    acc = evaluate_accuracy(graph, fixture_ds, 80.0)
    assert acc == pytest.approx(float(np.mean(fixture_ds.labels == 0)))


def test_random_predictions_near_chance():
    # 12 classes, 1200 balanced images; a model with random output weights
    rng = np.random.default_rng(7)
    n, classes = 1200, 12
    images = rng.integers(0, 256, (n, 8, 8), dtype=np.uint8)
    labels = np.repeat(np.arange(classes), n // classes)
    ds = ImageDataset(images, labels, tuple(map(str, range(classes))), np.array(["o"] * n), np.arange(n))
    graph = build(ArchSpec("resnet20", 2, 8, classes), seed=11)
    # shuffle labels independently of images so predictions are uninformative
    ds = ImageDataset(images, rng.permutation(labels), ds.class_names, ds.object_ids, ds.seq_index)
    acc = evaluate_accuracy(graph, ds, 127.5)
    p = 1 / classes
    sigma = math.sqrt(p * (1 - p) / n)
    assert abs(acc - p) <= 3 * sigma


# ---------------------------------------------------------------- autoencoder

def test_constant_images_error_collapses():
    n = 16
    ds = ImageDataset(np.full((n, 32, 32), 90, np.uint8), np.zeros(n, np.int64), ("a",),
                      np.array(["o"] * n), np.arange(n))
    graph = build(ArchSpec("autoencoder", 16, 32), seed=0)
    before = reconstruction_mse(graph, ds, 80.0)
    trained, log = train_autoencoder(graph, ds, TrainConfig(epochs=100, batch_size=8, augment=None, pixel_mean=80.0))
    after = reconstruction_mse(trained, ds, 80.0)
    # the target is a constant offset of 10; measured residual is about 2.6% of the start
    assert after < 0.05 * before
    assert log.records[-1].train_accuracy is None


def test_code_length_preserved_after_training(fixture_ds):
    graph = build(ArchSpec("autoencoder", 8, 32), seed=0)
    trained, _ = train_autoencoder(graph, fixture_ds, TrainConfig(epochs=1, batch_size=8))
    assert trained.shapes()[trained.resolve("enc_code")] == (8,)


def test_autoencoder_trainer_rejects_classifier(fixture_ds):
    with pytest.raises(ValueError, match="autoencoder"):
        train_autoencoder(_resnet(fixture_ds), fixture_ds, FAST)


# ---------------------------------------------------------------- width search

def test_single_width_search(fixture_ds):
    cfg = TrainConfig(epochs=1, batch_size=8, augment=None)
    result = width_search("resnet20", [4], fixture_ds, k=2, config=cfg)
    assert result.selected_width == 4
    (row,) = result.rows
    assert len(row.fold_accuracies) == 2 and not row.failures
    accs = np.array(row.fold_accuracies)
    assert row.acc_mean == pytest.approx(accs.sum() / 2)
    assert row.acc_std == pytest.approx(math.sqrt(((accs - accs.mean()) ** 2).mean()))
    assert (row.acc_min, row.acc_max) == (accs.min(), accs.max())
    lines = result.to_csv().splitlines()
    assert lines[0] == "width_param;acc_mean;acc_std;acc_max;acc_min"
    assert float(lines[1].split(";")[1]) == pytest.approx(100 * row.acc_mean, abs=1e-6)


def test_parallel_search_matches_serial(fixture_ds):
    cfg = TrainConfig(epochs=1, batch_size=8, augment=None)
    serial = width_search("mobilenet", [2, 4], fixture_ds, k=2, config=cfg)
    parallel = width_search("mobilenet", [2, 4], fixture_ds, k=2, config=cfg, jobs=2)
    assert serial.to_csv() == parallel.to_csv()


def test_failed_cells_are_recorded(fixture_ds):
    cfg = TrainConfig(epochs=1, batch_size=8, augment=None)
    # width 0 cannot be built; the search goes on with the valid width
    result = width_search("resnet20", [0, 4], fixture_ds, k=2, config=cfg)
    bad, good = result.rows
    assert len(bad.failures) == 2 and not bad.fold_accuracies
    assert result.selected_width == 4


def test_selection_ties_go_to_smaller_width():
    result = WidthSearchResult("x", [WidthStats(32, [0.5, 0.7]), WidthStats(16, [0.7, 0.5]), WidthStats(64, [0.1])])
    assert result.selected_width == 16
    for r in result.rows:
        assert r.acc_min <= r.acc_mean <= r.acc_max
    with pytest.raises(RuntimeError):
        WidthSearchResult("x", [WidthStats(8, [], ["fold 0: boom"])]).selected_width
