import numpy as np
import pytest

from neoseize import fcnn, training
from neoseize.training import (TrainConfig, balanced_indices, cross_entropy,
                               cross_entropy_from_logits, loo_split, lr_at, nesterov_step,
                               read_history, train_fcnn, write_history)


def test_cross_entropy_examples():
    assert cross_entropy([[0.5, 0.5]], [1]) == pytest.approx(np.log(2), abs=1e-12)
    assert cross_entropy([[0.0, 1.0]], [1]) == 0.0
    assert np.isfinite(cross_entropy([[1.0, 0.0]], [1]))
    assert cross_entropy([[1.0, 0.0]], [1]) == pytest.approx(-np.log(1e-38))
    z = np.array([[2.0, -1.0], [0.3, 0.4]])
    p = fcnn.softmax(z)
    assert cross_entropy_from_logits(z, [1, 0]) == pytest.approx(cross_entropy(p, [1, 0]), abs=1e-12)
    assert np.isfinite(cross_entropy_from_logits([[1000.0, -1000.0]], [1]))


def test_lr_schedule():
    assert lr_at(0) == 0.003
    assert lr_at(19) == 0.003
    assert lr_at(20) == pytest.approx(0.0027, abs=1e-15)
    assert lr_at(40) == pytest.approx(0.00243, abs=1e-15)
    assert lr_at(59) == pytest.approx(0.00243, abs=1e-15)
    with pytest.raises(ValueError):
        lr_at(-1)


def quad_grad(params):
    return {"w": 2 * params["w"]}


def test_nesterov_reduces_to_sgd_without_momentum():
    p = {"w": np.array([1.0, -2.0])}
    v = {"w": np.zeros(2)}
    nesterov_step(p, v, quad_grad, lr=0.1, mu=0.0)
    assert np.allclose(p["w"], [0.8, -1.6])


def test_nesterov_zero_gradient_and_lookahead():
    p = {"w": np.array([3.0])}
    v = {"w": np.array([0.5])}
    nesterov_step(p, v, lambda q: {"w": np.zeros(1)}, lr=0.1, mu=0.9)
    assert np.allclose(v["w"], [0.45]) and np.allclose(p["w"], [3.45])
    seen = []

    def spy(q):
        seen.append(q["w"].copy())
        return {"w": np.zeros(1)}
    nesterov_step(p, v, spy, lr=0.1, mu=0.9)
    # the gradient is taken at theta + mu v
    assert np.allclose(seen[0], [3.45 + 0.9 * 0.45])


def test_nesterov_converges_on_quadratic():
    p = {"w": np.array([5.0, -3.0])}
    v = {"w": np.zeros(2)}
    for _ in range(200):
        nesterov_step(p, v, quad_grad, lr=0.05, mu=0.9)
    assert np.all(np.abs(p["w"]) < 1e-3)


def test_balanced_indices():
    rng = np.random.default_rng(0)
    labels = np.r_[np.zeros(900, int), np.ones(40, int)]
    idx = balanced_indices(labels, 200, rng)
    assert len(idx) == 200 and labels[idx].mean() == 0.5
    assert len(np.unique(idx[labels[idx] == 0])) == 100
    idx = balanced_indices(labels, 4096, rng)
    assert len(idx) == 1800 and labels[idx].mean() == 0.5
    with pytest.raises(ValueError):
        balanced_indices(np.zeros(10, int), 10, rng)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)


def test_loo_split_partition():
    ids = [f"s{i}" for i in range(6)]
    vals = []
    for held in ids:
        tr, va, te = loo_split(ids, held, seed=0)
        assert te == [held] and va[0] != held
        assert sorted(tr + va + te) == sorted(ids) and len(tr) == 4
        vals.append(va[0])
    assert sorted(vals) == sorted(ids)
    assert loo_split(ids, "s2", seed=0) == loo_split(ids, "s2", seed=0)
    with pytest.raises(KeyError):
        loo_split(ids, "nope")
    with pytest.raises(ValueError):
        loo_split(ids[:2], "s0")


@pytest.fixture(scope="module")
def tiny_set(small_subjects):
    x, y = training.stack_fcnn_windows(small_subjects[:2])
    rng = np.random.default_rng(0)
    idx = np.r_[rng.choice(np.flatnonzero(y == 1), 16, replace=False),
                rng.choice(np.flatnonzero(y == 0), 16, replace=False)]
    return x[idx], y[idx]


def test_training_is_deterministic_and_logged(tiny_set, tmp_path):
    x, y = tiny_set
    cfg = TrainConfig(total_iterations=4, seed=3)
    m1, h1 = train_fcnn(x, y, x, y, cfg=cfg)
    m2, h2 = train_fcnn(x, y, x, y, cfg=cfg)
    for a, b in zip(m1.params().values(), m2.params().values()):
        assert np.array_equal(a, b)
    assert h1.train_loss == h2.train_loss
    assert h1.iteration == [0, 1, 2, 3] and h1.batch_size == 32
    assert h1.lr == [0.003] * 4
    path = tmp_path / "h.csv"
    write_history(h1, path)
    back = read_history(path)
    assert back.iteration == h1.iteration
    assert np.allclose(back.train_loss, h1.train_loss, rtol=1e-8)
    assert path.read_text().splitlines()[0] == "iteration,train_loss,train_auc,val_auc"


def test_training_improves_loss(tiny_set):
    x, y = tiny_set
    _, h = train_fcnn(x, y, cfg=TrainConfig(total_iterations=8))
    assert h.train_loss[-1] < h.train_loss[0]
    assert np.isnan(h.val_auc[0])


def test_training_rejects_single_class(tiny_set):
    x, y = tiny_set
    with pytest.raises(ValueError):
        train_fcnn(x[y == 0], y[y == 0], cfg=TrainConfig(total_iterations=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_loss_raises(tiny_set):
    x, y = tiny_set
    with pytest.raises(FloatingPointError):
        train_fcnn(x, y, cfg=TrainConfig(total_iterations=3, initial_lr=1e30))
