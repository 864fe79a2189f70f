from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparta.errors import ConfigError, DivergenceError, TaskDataError
from sparta.evaluation import macro_f1, score_task
from sparta.network import build_network, make_config
from sparta.nn import load_checkpoint, save_checkpoint
from sparta.synthetic import multitask_vectors
from sparta.train import (
    TaskData,
    TrainConfig,
    TrainHistory,
    dev_scores,
    epoch_schedule,
    format_grid_table,
    grid_points,
    grid_search,
    make_task_batches,
    train,
)

SMALL = {"i": 12, "d": 8, "x": 10}


def toy_data(n=100, missing_emotion=()):
    features = {f"u{j:03d}": np.zeros(3) for j in range(n)}
    labels = {"gender": {u: 0 for u in features},
              "emotion": {u: 1 for u in features if u not in missing_emotion}}
    return TaskData(features, labels, {u: "train" for u in features})


def separable_gender(seed=0, n=(200, 60, 60)):
    """Two Gaussian clusters 6 sigma apart along a random direction."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(12)
    direction /= np.linalg.norm(direction)
    features, labels, split = {}, {"gender": {}}, {}
    for set_name, count in zip(("train", "dev", "test"), n):
        for j in range(count):
            uid = f"{set_name}{j:04d}"
            y = j % 2
            features[uid] = rng.standard_normal(12) + (6 * y - 3) * direction
            labels["gender"][uid] = y
            split[uid] = set_name
    return TaskData(features, labels, split)


@pytest.fixture(scope="module")
def mtl_data():
    data, _ = multitask_vectors((600, 150, 150), kind="idx", seed=0, dims=SMALL)
    return data


def test_batch_arithmetic():
    batches = make_task_batches(toy_data(100), "gender", 32, factor=3)
    assert sum(len(b) for b in batches) == 300
    assert len(batches) == 10 and len(batches[-1]) == 12
    assert Counter(u for b in batches for u in b) == Counter({f"u{j:03d}": 3 for j in range(100)})


def test_pool_filter():
    missing = {"u005", "u017"}
    data = toy_data(40, missing)
    seen = {u for b in make_task_batches(data, "emotion", 8) for u in b}
    assert not seen & missing and len(seen) == 38


def test_batches_deterministic_and_seed_sensitive():
    data = toy_data(100)
    assert make_task_batches(data, "gender", 16, seed=4, epoch=2) == make_task_batches(data, "gender", 16, seed=4, epoch=2)
    assert make_task_batches(data, "gender", 16, seed=4) != make_task_batches(data, "gender", 16, seed=5)
    assert make_task_batches(data, "gender", 16, epoch=0) != make_task_batches(data, "gender", 16, epoch=1)


def test_empty_pool_raises():
    with pytest.raises(TaskDataError):
        make_task_batches(toy_data(10), "dialect", 4)


@settings(max_examples=30)
@given(st.integers(1, 80), st.integers(1, 40), st.integers(1, 4), st.integers(0, 1000))
def test_samples_per_epoch_is_factor_times_pool(n, batch, factor, seed):
    data = toy_data(n)
    batches = make_task_batches(data, "gender", batch, factor, seed)
    assert sum(map(len, batches)) == factor * n
    assert all(len(b) == batch for b in batches[:-1])


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(0, 5))
def test_modes_share_batch_multiset(seed, epoch):
    data = toy_data(50, {f"u{j:03d}" for j in range(0, 50, 3)})
    seq = TrainConfig(mode="sequential", batch_size=7, task_factors={"emotion": 2}, seed=seed)
    shu = TrainConfig(mode="shuffled", batch_size=7, task_factors={"emotion": 2}, seed=seed)
    a = epoch_schedule(data, ["gender", "emotion"], seq, epoch)
    b = epoch_schedule(data, ["gender", "emotion"], shu, epoch)
    key = lambda s: sorted((t, tuple(batch)) for t, batch in s)
    assert key(a) == key(b)
    # sequential runs every gender batch before any emotion batch
    tasks = [t for t, _ in a]
    assert tasks == sorted(tasks, key=["gender", "emotion"].index)


def test_train_config_validation():
    for bad in (dict(mode="random"), dict(batch_size=0), dict(epochs=0), dict(task_factors={"emotion": 1.5}),
                dict(task_factors={"age": 2}), dict(optimizer={"name": "rmsprop"})):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()
    cfg = TrainConfig(mode="shuffled", task_factors={"emotion": 3}, optimizer={"name": "sgd", "lr": 0.1})
    assert TrainConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epoch": 3})


def test_stl_separable_reaches_099():
    data = separable_gender()
    model = build_network(make_config("i", vector_dims={"i": 12}, hidden=32, tasks=["gender"]), 0)
    best, hist = train(model, data, TrainConfig(epochs=20, batch_size=16, optimizer={"name": "adam", "lr": 0.01}))
    assert hist.best_score >= 0.99
    assert dev_scores(best, data)["gender"] >= 0.99


def test_mtl_synthetic_reaches_095(mtl_data, tmp_path):
    cfg = make_config("idx", vector_dims=SMALL, hidden=64, head_hidden=32)
    model = build_network(cfg, 0)
    best, hist = train(model, mtl_data, TrainConfig(epochs=50, optimizer={"name": "adam", "lr": 0.003}))
    dev = hist.epochs[hist.best_epoch].dev_macro_f1
    assert min(dev.values()) >= 0.95, dev
    # selection score equals the max over the history
    assert hist.best_score == pytest.approx(max(e.score for e in hist.epochs), abs=1e-9)
    assert hist.best_epoch == min(i for i, e in enumerate(hist.epochs) if e.score == hist.best_score)
    # checkpoint reload reproduces the recorded dev score
    path = tmp_path / "best.sprt"
    save_checkpoint(path, best.params)
    from sparta.network import Model, expected_shapes
    reloaded = Model(cfg, load_checkpoint(path, expected_shapes(cfg)))
    again = dev_scores(reloaded, mtl_data)
    for t in dev:
        assert again[t] == pytest.approx(dev[t], abs=1e-6)
    # history round trip
    assert TrainHistory.from_dict(hist.to_dict()).to_dict() == hist.to_dict()


def test_head_updates_only_from_own_task(mtl_data):
    model = build_network(make_config("idx", vector_dims=SMALL, hidden=16, head_hidden=16), 0)
    for mode in ("sequential", "shuffled"):
        _, hist = train(model, mtl_data, TrainConfig(mode=mode, epochs=2, batch_size=64))
        for head, by_task in hist.head_updates.items():
            assert by_task[head] > 0
            assert all(v == 0 for t, v in by_task.items() if t != head)


def test_train_leaves_input_model_untouched(mtl_data):
    model = build_network(make_config("idx", vector_dims=SMALL, tasks=["emotion"]), 0)
    before = model.params.copy()
    train(model, mtl_data, TrainConfig(epochs=1))
    assert model.params.equals(before)


def test_training_is_deterministic(mtl_data):
    model = build_network(make_config("idx", vector_dims=SMALL, hidden=32, dropout=0.2), 3)
    cfg = TrainConfig(mode="shuffled", epochs=2, seed=9)
    a, ha = train(model, mtl_data, cfg)
    b, hb = train(model, mtl_data, cfg)
    assert a.params.equals(b.params)
    assert ha.to_dict() == hb.to_dict()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts(mtl_data):
    model = build_network(make_config("idx", vector_dims=SMALL, activation="relu", tasks=["dialect"]), 0)
    with pytest.raises(DivergenceError) as exc:
        train(model, mtl_data, TrainConfig(epochs=3, optimizer={"name": "sgd", "lr": 1e30}))
    assert exc.value.epoch is not None and exc.value.batch is not None


def test_missing_dev_labels_is_task_data_error():
    data = separable_gender()
    data = TaskData(data.features, data.labels, {u: ("train" if s == "dev" else s) for u, s in data.split.items()})
    model = build_network(make_config("i", vector_dims={"i": 12}, tasks=["gender"]), 0)
    with pytest.raises(TaskDataError):
        train(model, data, TrainConfig(epochs=1))


def test_grid_counts_and_determinism(mtl_data):
    space = {"hidden": [16, 32], "layers": [1, 2]}
    base = TrainConfig(epochs=2, batch_size=64)
    res = grid_search(space, mtl_data, base_train=base, vector_dims=SMALL)
    assert len(res) == 4
    assert [r.rank for r in res] == [1, 2, 3, 4]
    assert [r.score for r in res] == sorted((r.score for r in res), reverse=True)
    again = grid_search(space, mtl_data, base_train=base, vector_dims=SMALL)
    assert [(r.point.index, r.score) for r in res] == [(r.point.index, r.score) for r in again]
    assert format_grid_table(res) == format_grid_table(again)
    assert len(grid_search(space, mtl_data, budget=2, base_train=base, vector_dims=SMALL)) == 2
    with pytest.raises(ConfigError):
        grid_search(space, mtl_data, budget=5, base_train=base, vector_dims=SMALL)


def test_grid_out_of_range_fails_before_training():
    with pytest.raises(ConfigError, match="units"):
        grid_points({"hidden": [64, 512]})
    with pytest.raises(ConfigError):
        grid_points({"lr": [-1.0]})
    with pytest.raises(ConfigError, match="unknown"):
        grid_points({"width": [1]})
    points = grid_points({"optimizer": ["sgd", "adam"], "lr": [0.1, 0.01]})
    assert [p.values for p in points][:2] == [{"optimizer": "sgd", "lr": 0.1}, {"optimizer": "sgd", "lr": 0.01}]
    assert points[2].train.optimizer["name"] == "adam"


def test_score_task_counts_labeled_dev(mtl_data):
    model = build_network(make_config("idx", vector_dims=SMALL), 0)
    cm = score_task(model, mtl_data, "emotion", "dev")
    assert cm.total == len(mtl_data.labeled_ids("emotion", "dev"))
    assert 0 <= macro_f1(cm) <= 1
