"""Weighted cross-entropy training with plateau LR decay and early stopping.

The loss is the class-weighted binary cross-entropy mean plus an L2 penalty
over the decayable parameters (LayerNorm gains/biases and the residual
gates are exempt).  Updates are AdamW-style with gradient clipping at a
fixed norm.  Validation accuracy drives both the plateau scheduler and the
early-stop counter; the scheduler's stagnation counter resets whenever it
fires, the early-stop counter only resets on improvement.  The best
validation parameters are restored when the loop ends.
"""

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor
from .model import BgmHanModel

# full search space; desk runs subset it
GRID_SPACE = {
    "hidden": (256, 512, 1024, 2048),
    "heads": (4, 8, 16),
    "dropout": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
    "lr": (1e-4, 3e-4, 5e-4, 1e-5, 3e-5, 5e-5),
    "batch": (8, 16, 32, 64),
}
GRID_OPTIMUM = {"hidden": 1024, "heads": 8, "dropout": 0.6, "lr": 1e-5, "batch": 32}
_GRID_KEYS = ("hidden", "heads", "dropout", "lr", "batch")


class TrainingDiverged(RuntimeError):
    """Raised when a forward/backward pass produces non-finite numbers."""

    def __init__(self, message, epoch=None, batch_index=None, history=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.history = history or []


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch: int = 32
    max_epochs: int = 50
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    lr_min: float = 1e-7
    early_stop_patience: int = 10
    clip_norm: float = 1.0
    weight_decay: float = 1e-4
    min_improvement: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.lr_min <= 0:
            raise ValueError("lr_min must be positive")
        if min(self.batch, self.max_epochs, self.plateau_patience,
               self.early_stop_patience) < 1:
            raise ValueError("all counts must be >= 1")


@dataclass
class TrainState:
    epoch: int = 0
    lr: float = 0.0
    best_val_acc: float = float("-inf")
    epochs_since_improvement: int = 0
    plateau_counter: int = 0
    history: list = field(default_factory=list)


def class_weights(counts):
    """w_y = N / (2 N_y) for each class, N the total sample count."""
    counts = np.asarray(counts, dtype=np.int64)
    if (counts <= 0).any():
        raise ValueError(f"every class needs samples, got counts {counts.tolist()}")
    n = int(counts.sum())
    return n / (2.0 * counts)


def weighted_ce_loss(probs, labels, weights):
    """Class-weighted binary cross-entropy.

    Returns (sum, mean) as scalar Tensors; mean divides by the sample
    count, which is what makes minority-duplication equivalence exact.
    Probabilities are clamped 1e-12 from both boundaries first.
    """
    labels = np.asarray(labels)
    y = labels.astype(probs.dtype)
    w = np.asarray(weights)[labels].astype(probs.dtype)
    p = ad.clip(probs, 1e-12, 1.0 - 1e-12)
    one_minus = ad.add(ad.neg(p), 1.0)
    ll = ad.add(ad.mul(Tensor(y), ad.log(p)),
                ad.mul(Tensor(1.0 - y), ad.log(one_minus)))
    total = ad.neg(ad.sum_(ad.mul(Tensor(w), ll)))
    return total, ad.mul(total, 1.0 / labels.size)


def regularized_loss(loss, params, weight_decay):
    """loss + weight_decay * sum of squared parameter norms."""
    if weight_decay < 0:
        raise ValueError("weight_decay must be >= 0")
    if weight_decay == 0 or not params:
        return loss
    penalty = None
    for p in params:
        sq = ad.sum_(ad.mul(p, p))
        penalty = sq if penalty is None else ad.add(penalty, sq)
    return ad.add(loss, ad.mul(penalty, weight_decay))


class AdamW:
    """Adam with optional decoupled decay.  The L2 term normally rides in
    the loss instead, so weight_decay defaults to 0 here."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def scheduler_step(state, val_acc, cfg):
    """Plateau rule: k stagnant epochs -> lr *= alpha (floored at lr_min)."""
    if val_acc - state.best_val_acc >= cfg.min_improvement:
        state.best_val_acc = val_acc
        state.epochs_since_improvement = 0
        state.plateau_counter = 0
    else:
        state.epochs_since_improvement += 1
        state.plateau_counter += 1
        if state.plateau_counter >= cfg.plateau_patience:
            state.lr = max(state.lr * cfg.plateau_factor, cfg.lr_min)
            state.plateau_counter = 0
    return state


def early_stop(state, cfg):
    return state.epochs_since_improvement >= cfg.early_stop_patience


def accuracy_at_half(probs, labels):
    return float(((np.asarray(probs) > 0.5).astype(int) == np.asarray(labels)).mean())


def _eval_probs(model, ids, mask, batch):
    model.train_mode(False)
    out = np.empty(ids.shape[0], dtype=np.float64)
    for lo in range(0, ids.shape[0], batch):
        out[lo:lo + batch] = model.forward_batch(ids[lo:lo + batch],
                                                 mask[lo:lo + batch]).data
    return out


def train(model, splits, tcfg, log=None):
    """Optimize model in place; returns the final TrainState.

    Token grids for both splits are encoded once up front.  Fixed seed and
    single-threaded BLAS give bit-for-bit reproducible histories.
    """
    if not splits.train or not splits.val:
        raise ValueError("train and val splits must be non-empty")
    rng = np.random.Generator(np.random.PCG64([tcfg.seed, 0x5E0F]))
    model.reseed_dropout(tcfg.seed)

    train_ids, train_mask = model.token_grids(splits.train)
    val_ids, val_mask = model.token_grids(splits.val)
    y_train = np.array([p.offer for p in splits.train], dtype=np.int64)
    y_val = np.array([p.offer for p in splits.val], dtype=np.int64)
    weights = class_weights(np.bincount(y_train, minlength=2))

    trainable = model.params.trainable()
    decayable = model.params.decayable()
    opt = AdamW(trainable, tcfg.lr)
    state = TrainState(lr=tcfg.lr)
    best = None
    n = len(splits.train)

    for epoch in range(1, tcfg.max_epochs + 1):
        epoch_lr = state.lr
        order = rng.permutation(n)
        model.train_mode(True)
        batch_losses = []
        for bi, lo in enumerate(range(0, n, tcfg.batch)):
            idx = order[lo:lo + tcfg.batch]
            try:
                with GradTape() as tape:
                    probs = model.forward_batch(train_ids[idx], train_mask[idx])
                    _, mean_loss = weighted_ce_loss(probs, y_train[idx], weights)
                    loss = regularized_loss(mean_loss, decayable, tcfg.weight_decay)
                if not np.isfinite(loss.data):
                    raise ad.NonFiniteError(f"loss value {float(loss.data)}")
                tape.backward(loss)
            except ad.NonFiniteError as e:
                raise TrainingDiverged(
                    f"non-finite numbers at epoch {epoch}, batch {bi}: {e}",
                    epoch=epoch, batch_index=bi, history=state.history,
                ) from e
            ad.clip_grad_norm(trainable, tcfg.clip_norm)
            opt.lr = state.lr
            opt.step()
            opt.zero_grad()
            batch_losses.append(float(loss.data))

        val_probs = _eval_probs(model, val_ids, val_mask, tcfg.batch)
        val_acc = accuracy_at_half(val_probs, y_val)
        state.epoch = epoch
        scheduler_step(state, val_acc, tcfg)
        if state.epochs_since_improvement == 0:
            best = {name: t.data.copy() for name, t in model.params.named_tensors()}
        state.history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_acc": val_acc,
            "lr": epoch_lr,
        })
        if log:
            log(f"epoch {epoch:3d}  loss {np.mean(batch_losses):.4f}  "
                f"val_acc {val_acc:.4f}  lr {epoch_lr:.2e}")
        if early_stop(state, tcfg):
            break

    if best is not None:
        for name, t in model.params.named_tensors():
            t.data = best[name]
    return state


def grid_search(space, splits, model_cfg, vocab, tcfg_base, log=None):
    """Train every configuration in the product space; returns
    (best_row, leaderboard) with the leaderboard sorted by descending
    validation accuracy and ties broken toward the smaller hidden size."""
    missing = [k for k in _GRID_KEYS if k not in space]
    if missing:
        raise ValueError(f"grid space missing axes {missing}")
    rows = []
    combos = list(itertools.product(*(space[k] for k in _GRID_KEYS)))
    for i, combo in enumerate(combos):
        trial = dict(zip(_GRID_KEYS, combo))
        mcfg = replace(model_cfg, hidden=trial["hidden"], heads=trial["heads"],
                       dropout=trial["dropout"], vocab_size=0)
        tcfg = replace(tcfg_base, lr=trial["lr"], batch=trial["batch"],
                       seed=tcfg_base.seed + i)
        model = BgmHanModel(mcfg, vocab, seed=tcfg.seed)
        state = train(model, splits, tcfg)
        row = {"trial": i, **trial,
               "val_acc": state.best_val_acc, "epochs": state.epoch}
        rows.append(row)
        if log:
            log(f"trial {i}: {trial} -> val_acc {row['val_acc']:.4f} "
                f"in {row['epochs']} epochs")
    leaderboard = sorted(rows, key=lambda r: (-r["val_acc"], r["hidden"]))
    return leaderboard[0], leaderboard


def write_leaderboard(path, rows, manifest=None):
    cols = ("trial", "hidden", "heads", "dropout", "lr", "batch", "val_acc", "epochs")
    with open(path, "w", encoding="utf-8") as fh:
        if manifest:
            fh.write(f"# {manifest}\n")
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in cols) + "\n")
