"""Loss/optimizer/scheduler exactness and the training loop contract."""

import numpy as np
import pytest

from bgmhan import autodiff as ad
from bgmhan.autodiff import GradTape, Tensor
from bgmhan.model import BgmHanModel, ModelConfig
from bgmhan.profiles import DatasetSplit
from bgmhan.training import (
    GRID_OPTIMUM, GRID_SPACE, AdamW, TrainConfig, TrainingDiverged, TrainState,
    accuracy_at_half, class_weights, early_stop, grid_search, regularized_loss,
    scheduler_step, train, weighted_ce_loss, write_leaderboard,
)

from conftest import make_short_profile
from oracles import ce_loop


# ---------------------------------------------------------------------------
# loss pieces

def test_class_weights_formula_random_counts():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n0, n1 = rng.integers(1, 5000, size=2)
        w = class_weights([n0, n1])
        n = n0 + n1
        assert abs(w[0] - n / (2 * n0)) < 1e-12
        assert abs(w[1] - n / (2 * n1)) < 1e-12


def test_class_weights_rejects_empty_class():
    with pytest.raises(ValueError, match="needs samples"):
        class_weights([5, 0])


def test_weighted_ce_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        probs = rng.random(n)
        probs[rng.random(n) < 0.1] = 0.0   # exercise the clamp
        probs[rng.random(n) < 0.1] = 1.0
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        w = class_weights(np.bincount(labels, minlength=2))
        total, mean = weighted_ce_loss(Tensor(probs), labels, w)
        o_total, o_mean = ce_loop(probs, labels, w)
        assert abs(float(total.data) - o_total) < 1e-12 * max(1.0, abs(o_total))
        assert abs(float(mean.data) - o_mean) < 1e-12 * max(1.0, abs(o_mean))


def test_weighting_equals_minority_duplication():
    # counts (4, 2): weighted mean CE == unweighted mean CE with the two
    # positives fed twice
    rng = np.random.default_rng(2)
    p = rng.random(6) * 0.8 + 0.1
    labels = np.array([0, 0, 0, 0, 1, 1])
    w = class_weights([4, 2])
    _, weighted = weighted_ce_loss(Tensor(p), labels, w)
    p_dup = np.concatenate([p, p[4:]])
    labels_dup = np.concatenate([labels, labels[4:]])
    _, plain = weighted_ce_loss(Tensor(p_dup), labels_dup, np.ones(2))
    assert abs(float(weighted.data) - float(plain.data)) < 1e-14


def test_regularized_loss_value_and_validation():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([[3.0]]), requires_grad=True)
    loss = Tensor(np.asarray(0.5))
    out = regularized_loss(loss, [a, b], 0.1)
    assert abs(float(out.data) - (0.5 + 0.1 * (1 + 4 + 9))) < 1e-12
    assert regularized_loss(loss, [a], 0.0) is loss
    assert regularized_loss(loss, [], 0.1) is loss
    with pytest.raises(ValueError, match=">= 0"):
        regularized_loss(loss, [a], -0.1)


def test_regularized_loss_gradient_adds_2wd_theta():
    a = Tensor(np.array([3.0]), requires_grad=True)
    with GradTape() as tape:
        loss = regularized_loss(ad.mul(a, 0.0), [a], 0.05)
        loss = ad.sum_(loss)
    tape.backward(loss)
    assert np.allclose(a.grad, 2 * 0.05 * 3.0)


# ---------------------------------------------------------------------------
# optimizer

def test_adamw_single_step_hand_oracle():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([2.0])
    opt = AdamW([p], lr=0.1)
    opt.step()
    # m=0.2, v=0.004, c1=0.1, c2=0.001 -> update = 2/(2 + 1e-8)
    expect = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8))
    assert abs(p.data[0] - expect) < 1e-16


def test_adamw_skips_missing_grads_and_zero_grad():
    p1 = Tensor(np.array([1.0]), requires_grad=True)
    p2 = Tensor(np.array([5.0]), requires_grad=True)
    p1.grad = np.array([1.0])
    opt = AdamW([p1, p2], lr=0.1)
    opt.step()
    assert p2.data[0] == 5.0 and p1.data[0] != 1.0
    opt.zero_grad()
    assert p1.grad is None and p2.grad is None


def test_adamw_decoupled_decay_path():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([2.0])
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    opt.step()
    expect = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8) + 0.5 * 1.0)
    assert abs(p.data[0] - expect) < 1e-15


# ---------------------------------------------------------------------------
# scheduler / stopping

def run_schedule(accs, lr=1e-5, **kw):
    cfg = TrainConfig(lr=lr, **kw)
    state = TrainState(lr=lr)
    lrs = []
    for a in accs:
        scheduler_step(state, a, cfg)
        lrs.append(state.lr)
    return state, lrs


def test_scheduler_fires_after_three_stagnant_epochs():
    state, lrs = run_schedule([0.5, 0.6, 0.6, 0.6, 0.6])
    assert lrs == [1e-5, 1e-5, 1e-5, 1e-5, 1e-5 * 0.1]
    assert state.epochs_since_improvement == 3
    assert state.plateau_counter == 0  # reset when it fires


def test_scheduler_floor_is_exact():
    state, _ = run_schedule([0.9, 0.1, 0.1, 0.1], lr=5e-7)
    assert state.lr == 1e-7


def test_scheduler_counter_resets_on_improvement():
    state, lrs = run_schedule([0.5, 0.5, 0.5, 0.7, 0.7, 0.7, 0.7])
    # stagnant x2, improve, stagnant x3 -> fire on the last step only
    assert lrs[-2] == 1e-5 and lrs[-1] == 1e-5 * 0.1
    assert state.best_val_acc == 0.7


def test_min_improvement_boundary():
    state, _ = run_schedule([0.5, 0.5 + 1e-6])
    assert state.epochs_since_improvement == 0  # gain == threshold counts
    state, _ = run_schedule([0.5, 0.5 + 9e-7])
    assert state.epochs_since_improvement == 1


def test_early_stop_threshold():
    cfg = TrainConfig()
    assert not early_stop(TrainState(epochs_since_improvement=9), cfg)
    assert early_stop(TrainState(epochs_since_improvement=10), cfg)


def test_train_config_defaults_and_validation():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.batch, cfg.max_epochs) == (1e-5, 32, 50)
    assert (cfg.plateau_factor, cfg.plateau_patience, cfg.lr_min) == (0.1, 3, 1e-7)
    assert (cfg.early_stop_patience, cfg.clip_norm, cfg.weight_decay) == (10, 1.0, 1e-4)
    with pytest.raises(ValueError, match="plateau_factor"):
        TrainConfig(plateau_factor=1.0)
    with pytest.raises(ValueError, match="lr_min"):
        TrainConfig(lr_min=0.0)
    with pytest.raises(ValueError, match=">= 1"):
        TrainConfig(batch=0)


def test_accuracy_at_half_strict_inequality():
    assert accuracy_at_half([0.6, 0.4, 0.5], [1, 0, 1]) == pytest.approx(2 / 3)


def test_grid_constants():
    assert tuple(GRID_SPACE) == ("hidden", "heads", "dropout", "lr", "batch")
    assert GRID_SPACE["hidden"] == (256, 512, 1024, 2048)
    assert GRID_SPACE["heads"] == (4, 8, 16)
    assert GRID_SPACE["dropout"] == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    assert GRID_SPACE["lr"] == (1e-4, 3e-4, 5e-4, 1e-5, 3e-5, 5e-5)
    assert GRID_SPACE["batch"] == (8, 16, 32, 64)
    assert GRID_OPTIMUM == {"hidden": 1024, "heads": 8, "dropout": 0.6,
                            "lr": 1e-5, "batch": 32}


# ---------------------------------------------------------------------------
# the loop itself

def tiny_splits(n=30):
    profiles = [make_short_profile(i, offer=i % 2) for i in range(n)]
    k = max(4, n // 5)
    return DatasetSplit(train=profiles[:-k], val=profiles[-k:], test=[])


def small_model(vocab, seed=5):
    cfg = ModelConfig.desk(dim=16, hidden=32, heads=2, sentences=4, tokens=12,
                           dropout=0.1, vocab_size=vocab.size)
    return BgmHanModel(cfg, vocab, seed=seed)


def test_train_history_contract(vocab):
    splits = tiny_splits()
    tcfg = TrainConfig(lr=1e-3, batch=8, max_epochs=3, seed=5)
    state = train(small_model(vocab), splits, tcfg)
    assert state.epoch == 3 and len(state.history) == 3
    for i, row in enumerate(state.history, start=1):
        assert set(row) == {"epoch", "train_loss", "val_acc", "lr"}
        assert row["epoch"] == i
        assert row["lr"] == 1e-3  # no plateau can fire within 3 epochs
        assert np.isfinite(row["train_loss"])
    assert state.best_val_acc == max(r["val_acc"] for r in state.history)


def test_train_is_bit_reproducible(vocab):
    splits = tiny_splits()
    tcfg = TrainConfig(lr=1e-3, batch=8, max_epochs=3, seed=9)
    s1 = train(small_model(vocab, seed=9), splits, tcfg)
    s2 = train(small_model(vocab, seed=9), splits, tcfg)
    assert s1.history == s2.history


def test_train_restores_best_epoch_weights(vocab):
    splits = tiny_splits()
    tcfg = TrainConfig(lr=1e-3, batch=8, max_epochs=4, seed=3)
    model = small_model(vocab, seed=3)
    state = train(model, splits, tcfg)
    probs = model.predict_proba(splits.val)
    labels = [p.offer for p in splits.val]
    assert accuracy_at_half(probs, labels) == state.best_val_acc


def test_train_rejects_empty_split(vocab):
    splits = DatasetSplit(train=[make_short_profile(0)], val=[], test=[])
    with pytest.raises(ValueError, match="non-empty"):
        train(small_model(vocab), splits, TrainConfig())


def test_train_diverged_carries_location(vocab):
    splits = tiny_splits(12)
    model = small_model(vocab)
    model.params.embedding.data[:] = np.inf
    with pytest.raises(TrainingDiverged) as ei:
        train(model, splits, TrainConfig(lr=1e-3, batch=8, max_epochs=2))
    assert ei.value.epoch == 1 and ei.value.batch_index == 0
    assert ei.value.history == []


def test_grid_search_two_trials_and_ordering(vocab):
    splits = tiny_splits(16)
    space = {"hidden": (16, 32), "heads": (2,), "dropout": (0.0,),
             "lr": (1e-3,), "batch": (8,)}
    mcfg = ModelConfig.desk(dim=16, sentences=4, tokens=12)
    tcfg = TrainConfig(max_epochs=1, seed=40)
    best, board = grid_search(space, splits, mcfg, vocab, tcfg)
    assert len(board) == 2 and best is board[0]
    keys = [(-r["val_acc"], r["hidden"]) for r in board]
    assert keys == sorted(keys)
    assert {r["hidden"] for r in board} == {16, 32}
    assert all(r["epochs"] == 1 for r in board)


def test_grid_search_missing_axis(vocab):
    with pytest.raises(ValueError, match="missing axes"):
        grid_search({"hidden": (8,)}, tiny_splits(12),
                    ModelConfig.desk(), vocab, TrainConfig())


def test_write_leaderboard_format(tmp_path):
    rows = [{"trial": 1, "hidden": 32, "heads": 2, "dropout": 0.5,
             "lr": 1e-3, "batch": 8, "val_acc": 0.75, "epochs": 4}]
    path = tmp_path / "board.csv"
    write_leaderboard(path, rows, manifest="tool=x")
    lines = path.read_text().splitlines()
    assert lines[0] == "# tool=x"
    assert lines[1] == "trial,hidden,heads,dropout,lr,batch,val_acc,epochs"
    assert lines[2] == "1,32,2,0.5,0.001,8,0.75,4"
