"""Metric suite, decision-point correlation, and non-neural baselines.

Everything here is pure computation: binary classification metrics with
macro averaging, a Pearson correlation matrix over the six decision
columns, TF-IDF + logistic regression, and exact k-NN retrieval.  The
baselines reuse the package's own loss and optimizer rather than pulling
in an ML framework.

A note on reference values: the correlations measured on the original
admissions records (0.67 between shortlisting and degree offer, 0.62
between admission recommendation and degree offer) depend on that
confidential corpus.  Synthetic data reproduces the computation, not
those numbers; do not expect them from generated profiles.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape, Tensor
from .profiles import DECISION_COLUMNS
from .training import AdamW, class_weights, weighted_ce_loss

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass
class MetricReport:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    confusion: tuple  # (TN, FP, FN, TP)
    per_class: dict
    n: int

    def to_json(self):
        return {
            "accuracy": self.accuracy,
            "precision_macro": self.precision_macro,
            "recall_macro": self.recall_macro,
            "f1_macro": self.f1_macro,
            "confusion": {"TN": self.confusion[0], "FP": self.confusion[1],
                          "FN": self.confusion[2], "TP": self.confusion[3]},
            "per_class": self.per_class,
            "n": self.n,
        }

    def format_table(self):
        tn, fp, fn, tp = self.confusion
        lines = [
            f"samples            {self.n}",
            f"accuracy           {self.accuracy:.4f}",
            f"precision (macro)  {self.precision_macro:.4f}",
            f"recall (macro)     {self.recall_macro:.4f}",
            f"f1 (macro)         {self.f1_macro:.4f}",
            "confusion          pred=0  pred=1",
            f"  true=0           {tn:6d}  {fp:6d}",
            f"  true=1           {fn:6d}  {tp:6d}",
        ]
        return "\n".join(lines)


def _prf(tp, fp, fn):
    # 0/0 is defined as 0 throughout
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def metrics(preds, labels):
    """Binary metrics with macro averaging over both classes."""
    p = np.asarray(preds, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError(f"preds/labels shape mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("metrics need at least one sample")
    tn = int(((p == 0) & (y == 0)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    tp = int(((p == 1) & (y == 1)).sum())
    p1, r1, f1_1 = _prf(tp, fp, fn)
    p0, r0, f1_0 = _prf(tn, fn, fp)  # class 0: swap roles
    return MetricReport(
        accuracy=(tp + tn) / p.size,
        precision_macro=(p0 + p1) / 2,
        recall_macro=(r0 + r1) / 2,
        f1_macro=(f1_0 + f1_1) / 2,
        confusion=(tn, fp, fn, tp),
        per_class={"0": {"precision": p0, "recall": r0, "f1": f1_0},
                   "1": {"precision": p1, "recall": r1, "f1": f1_1}},
        n=int(p.size),
    )


def correlation_matrix(records):
    """Pairwise Pearson r over the six decision columns.

    Population convention (divide by n).  A constant column has undefined
    correlations everywhere, its diagonal included; those entries are NaN.
    Returns (labels, 6x6 float array).
    """
    if len(records) < 2:
        raise ValueError("correlation needs at least 2 records")
    cols = np.array([[r.values[c] for c in DECISION_COLUMNS] for r in records],
                    dtype=np.float64)
    centered = cols - cols.mean(axis=0)
    cov = centered.T @ centered / len(records)
    sd = np.sqrt(np.diag(cov))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
    return DECISION_COLUMNS, corr


def write_correlation_csv(path, labels, matrix, manifest=None):
    with open(path, "w", encoding="utf-8") as fh:
        if manifest:
            fh.write(f"# {manifest}\n")
        fh.write("," + ",".join(labels) + "\n")
        for name, row in zip(labels, matrix):
            fh.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# TF-IDF + logistic regression

def tokenize(text):
    return _TOKEN_RE.findall(text.lower())


@dataclass
class TfidfModel:
    vocab: dict  # term -> column
    idf: np.ndarray


def fit_tfidf(texts):
    """Vocabulary + smoothed idf = ln((1+N)/(1+df)) + 1."""
    df = {}
    for text in texts:
        for term in set(tokenize(text)):
            df[term] = df.get(term, 0) + 1
    if not df:
        raise ValueError("empty vocabulary: no tokens in any document")
    vocab = {term: i for i, term in enumerate(sorted(df))}
    n = len(texts)
    idf = np.empty(len(vocab))
    for term, i in vocab.items():
        idf[i] = math.log((1 + n) / (1 + df[term])) + 1.0
    return TfidfModel(vocab=vocab, idf=idf)


def tfidf_transform(model, texts):
    """Dense tf*idf rows, L2-normalized; all-unknown rows stay zero."""
    X = np.zeros((len(texts), len(model.vocab)))
    for r, text in enumerate(texts):
        for term in tokenize(text):
            c = model.vocab.get(term)
            if c is not None:
                X[r, c] += 1.0
    X *= model.idf
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    np.divide(X, norms, out=X, where=norms > 0)
    return X


def profile_text(p):
    return " ".join(p.field_texts())


def tfidf_logreg(train, test, steps=300, lr=0.05, seed=0):
    """The raw-text baseline: smoothed TF-IDF into logistic regression
    trained full-batch with the package loss and optimizer.

    Returns (MetricReport on test, test probabilities).
    """
    if any(p.offer is None for p in train) or any(p.offer is None for p in test):
        raise ValueError("tfidf_logreg needs labeled profiles")
    y_train = np.array([p.offer for p in train], dtype=np.int64)
    y_test = np.array([p.offer for p in test], dtype=np.int64)
    tf = fit_tfidf([profile_text(p) for p in train])
    X_train = Tensor(tfidf_transform(tf, [profile_text(p) for p in train]))
    X_test = tfidf_transform(tf, [profile_text(p) for p in test])

    w = Tensor(np.zeros((len(tf.vocab), 1)), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    weights = class_weights(np.bincount(y_train, minlength=2))
    opt = AdamW([w, b], lr=lr)
    for _ in range(steps):
        with GradTape() as tape:
            logits = ad.add(ad.matmul(X_train, w), b)
            probs = ad.reshape(ad.sigmoid(logits), (len(train),))
            _, loss = weighted_ce_loss(probs, y_train, weights)
        tape.backward(loss)
        opt.step()
        opt.zero_grad()

    z = X_test @ w.data[:, 0] + b.data[0]
    probs_test = 1.0 / (1.0 + np.exp(-z))
    report = metrics((probs_test > 0.5).astype(int), y_test)
    return report, probs_test


# ---------------------------------------------------------------------------
# k-NN retrieval

def _encoder_vectors(model, profiles):
    vecs = np.empty((len(profiles), model.cfg.dim))
    for i in range(0, len(profiles), 64):
        chunk = profiles[i:i + 64]
        ids, mask = model.token_grids(chunk)
        model.train_mode(False)
        hf = model.encode_fields(ids, mask).data  # (n, F, d)
        vecs[i:i + len(chunk)] = hf.mean(axis=1)
    return vecs


def knn_retrieval(train, test, k=5, metric="l2", features="tfidf", model=None):
    """Exact k-nearest-neighbor majority vote over profile vectors.

    Vote ties drop the farthest neighbor and re-vote; an exhausted
    neighborhood falls back to label 0.
    """
    if k < 1 or k > len(train):
        raise ValueError(f"k={k} must be in [1, {len(train)}]")
    if metric not in ("l2", "cosine"):
        raise ValueError(f"metric must be 'l2' or 'cosine', got {metric!r}")
    y_train = np.array([p.offer for p in train], dtype=np.int64)
    y_test = np.array([p.offer for p in test], dtype=np.int64)

    if features == "tfidf":
        tf = fit_tfidf([profile_text(p) for p in train])
        A = tfidf_transform(tf, [profile_text(p) for p in train])
        B = tfidf_transform(tf, [profile_text(p) for p in test])
    elif features == "encoder":
        if model is None:
            raise ValueError("features='encoder' needs a model")
        A = _encoder_vectors(model, train)
        B = _encoder_vectors(model, test)
    else:
        raise ValueError(f"features must be 'tfidf' or 'encoder', got {features!r}")

    if metric == "l2":
        d2 = ((B[:, None, :] - A[None, :, :]) ** 2).sum(axis=2)
        dist = np.sqrt(np.maximum(d2, 0.0))
    else:
        na = np.linalg.norm(A, axis=1)
        nb = np.linalg.norm(B, axis=1)
        denom = np.outer(nb, na)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = (B @ A.T) / denom
        cos = np.nan_to_num(cos, nan=0.0)
        dist = 1.0 - cos

    preds = np.empty(len(test), dtype=np.int64)
    for i in range(len(test)):
        order = sorted(range(len(train)), key=lambda j: (dist[i, j], j))
        neigh = order[:k]
        while neigh:
            votes = y_train[neigh]
            ones = int(votes.sum())
            zeros = len(neigh) - ones
            if ones != zeros:
                preds[i] = int(ones > zeros)
                break
            neigh = neigh[:-1]  # drop the farthest, re-vote
        else:
            preds[i] = 0
    return metrics(preds, y_test)
