"""Hierarchical gated-attention classifier over profile fields.

Each field is embedded as an s x w x d grid (sentences split on '.', BPE
tokens per sentence, zero-padded both ways, PAD id 0 embeds to the zero
vector).  Every level runs the same pipeline: LayerNorm, multi-head
self-attention restricted to real positions, dropout, a gated residual
block, then masked mean pooling over real positions.  Token level turns
sentences into vectors, sentence level turns fields into h_f of length d;
the field vectors are concatenated in fixed order, optionally pass one more
(unpooled) attention stage, and a one-hidden-layer MLP with a sigmoid maps
them to the offer probability.

Attention is internally hidden = heads * d_k wide and d wide at its input
and output, so h_f keeps length d at every level.

Batches are trimmed to the longest real sentence/token count before any
arithmetic, which is what makes h_f independent of the (s, w) padding
budget: the same text under a bigger budget runs the identical numbers.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bpe import PAD_ID
from .profiles import FIELD_ORDER
from .util import file_sha256

_MAGIC = b"BGMHCKP1"
_FORMAT = "bgmhan-checkpoint v1"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    sentences: int = 10
    tokens: int = 50
    dim: int = 768
    hidden: int = 1024
    heads: int = 8
    dropout: float = 0.6
    vocab_size: int = 0  # 0 means bind to the vocabulary at build time
    fields: int = len(FIELD_ORDER)
    field_stage: bool = True
    gated: bool = True
    ln_eps: float = 1e-5
    precision: str = "single"

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"heads={self.heads} must divide hidden={self.hidden}")
        if min(self.sentences, self.tokens, self.dim, self.hidden, self.fields) < 1:
            raise ValueError("all size fields must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision}")

    @property
    def d_k(self):
        return self.hidden // self.heads

    @property
    def np_dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @classmethod
    def desk(cls, **overrides):
        """Small configuration sized for CPU experiments."""
        base = dict(sentences=6, tokens=24, dim=64, hidden=128, heads=4, dropout=0.1)
        base.update(overrides)
        return cls(**base)


_LEVEL_TENSORS = (
    "ln_g", "ln_b", "wq", "wk", "wv", "wo", "gamma",
    "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2", "grn_g", "grn_b",
)


@dataclass
class LevelParams:
    ln_g: Tensor
    ln_b: Tensor
    wq: Tensor  # heads stored as column blocks of a (d, heads*d_k) matrix
    wk: Tensor
    wv: Tensor
    wo: Tensor
    gamma: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    grn_g: Tensor
    grn_b: Tensor


@dataclass
class HeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class ModelParams:
    embedding: Tensor
    token: LevelParams
    sentence: LevelParams
    field_block: LevelParams | None
    head: HeadParams

    def named_tensors(self):
        yield "embedding", self.embedding
        for prefix, lvl in (("token", self.token), ("sentence", self.sentence),
                            ("field", self.field_block)):
            if lvl is None:
                continue
            for name in _LEVEL_TENSORS:
                yield f"{prefix}.{name}", getattr(lvl, name)
        for name in ("w1", "b1", "w2", "b2"):
            yield f"head.{name}", getattr(self.head, name)

    def trainable(self):
        return [t for _, t in self.named_tensors() if t.requires_grad]

    def decayable(self):
        """Parameters the L2 penalty covers: everything except LayerNorm
        gains/biases and the residual gates."""
        skip = {"ln_g", "ln_b", "grn_g", "grn_b", "gamma"}
        return [
            t for name, t in self.named_tensors()
            if t.requires_grad and name.split(".")[-1] not in skip
        ]


def _uniform(rng, fan_in, shape, dtype):
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _init_level(rng, cfg, dtype):
    d, hid = cfg.dim, cfg.hidden
    gamma = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
    if not cfg.gated:
        # ablation: gate pinned shut, GRN degenerates to its LayerNorm
        gamma = Tensor(np.zeros(d, dtype=dtype), requires_grad=False)
    return LevelParams(
        ln_g=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        ln_b=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        wq=Tensor(_uniform(rng, d, (d, hid), dtype), requires_grad=True),
        wk=Tensor(_uniform(rng, d, (d, hid), dtype), requires_grad=True),
        wv=Tensor(_uniform(rng, d, (d, hid), dtype), requires_grad=True),
        wo=Tensor(_uniform(rng, hid, (hid, d), dtype), requires_grad=True),
        gamma=gamma,
        ffn_w1=Tensor(_uniform(rng, d, (d, hid), dtype), requires_grad=True),
        ffn_b1=Tensor(np.zeros(hid, dtype=dtype), requires_grad=True),
        ffn_w2=Tensor(_uniform(rng, hid, (hid, d), dtype), requires_grad=True),
        ffn_b2=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
        grn_g=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
        grn_b=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
    )


def init_params(cfg, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    dtype = cfg.np_dtype
    emb = _uniform(rng, cfg.dim, (cfg.vocab_size, cfg.dim), dtype)
    emb[PAD_ID] = 0.0  # padded positions embed to exact zero
    concat = cfg.fields * cfg.dim
    return ModelParams(
        embedding=Tensor(emb, requires_grad=True),
        token=_init_level(rng, cfg, dtype),
        sentence=_init_level(rng, cfg, dtype),
        field_block=_init_level(rng, cfg, dtype) if cfg.field_stage else None,
        head=HeadParams(
            w1=Tensor(_uniform(rng, concat, (concat, cfg.hidden), dtype), requires_grad=True),
            b1=Tensor(np.zeros(cfg.hidden, dtype=dtype), requires_grad=True),
            w2=Tensor(_uniform(rng, cfg.hidden, (cfg.hidden, 1), dtype), requires_grad=True),
            b2=Tensor(np.zeros(1, dtype=dtype), requires_grad=True),
        ),
    )


@dataclass
class FieldEmbedding:
    values: Tensor  # (s, w, d)
    mask: np.ndarray  # (s, w) bool, True at real tokens


def field_token_grid(text, vocab, cfg):
    """Sentence/token id grid per the embedding recipe.

    Split on the literal '.', drop blank segments, keep the first s
    sentences, BPE-encode each, truncate to w tokens, zero-pad both axes.
    """
    ids = np.full((cfg.sentences, cfg.tokens), PAD_ID, dtype=np.int64)
    mask = np.zeros((cfg.sentences, cfg.tokens), dtype=bool)
    segments = [seg for seg in text.split(".") if seg.strip()][: cfg.sentences]
    for i, seg in enumerate(segments):
        toks = vocab.encode(seg)[: cfg.tokens]
        ids[i, : len(toks)] = toks
        mask[i, : len(toks)] = True
    return ids, mask


def embed_field(text, vocab, table, cfg):
    """Embed one field text to its (s, w, d) grid plus mask."""
    ids, mask = field_token_grid(text, vocab, cfg)
    return FieldEmbedding(values=ad.embedding(table, ids), mask=mask)


def _maybe_batch(x):
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    return x, False


def multi_head_attention(x, params, cfg, mask=None):
    """Self-attention over positions; masked keys get exactly zero weight.

    x is (n, l, d) or a single (l, d) item.  Heads project d -> d_k each,
    run scaled dot-product attention, concatenate to heads*d_k, and W^O
    brings the result back to width d.
    """
    x, squeeze = _maybe_batch(x)
    n, l, d = x.shape
    h, dk = cfg.heads, cfg.d_k

    def heads_view(t):
        return ad.transpose(ad.reshape(t, (n, l, h, dk)), (0, 2, 1, 3))

    q = heads_view(ad.matmul(x, params.wq))
    k = heads_view(ad.matmul(x, params.wk))
    v = heads_view(ad.matmul(x, params.wv))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dk))
    if mask is None:
        weights = ad.softmax(scores, axis=-1)
    else:
        weights = ad.masked_softmax(scores, np.asarray(mask, bool)[:, None, None, :], axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (n, l, h * dk))
    out = ad.matmul(ctx, params.wo)
    return ad.reshape(out, (l, d)) if squeeze else out


def gated_residual(x, params, cfg):
    """GRN(X) = LayerNorm(gamma * FFN(X) + X), FFN = GELU(XW1+b1)W2+b2.

    With gamma at zero this is exactly LayerNorm(X): the FFN branch
    multiplies to zero and the residual passes through untouched.
    """
    inner = ad.gelu(ad.add(ad.matmul(x, params.ffn_w1), params.ffn_b1))
    ffn = ad.add(ad.matmul(inner, params.ffn_w2), params.ffn_b2)
    gated = ad.mul(ffn, params.gamma)
    return ad.layer_norm(ad.add(gated, x), params.grn_g, params.grn_b, cfg.ln_eps)


def masked_mean(x, mask):
    """Mean over axis 1 restricted to masked-true rows; empty rows pool to 0."""
    mask = np.asarray(mask, bool)
    weights = mask.astype(x.dtype)[..., None]
    total = ad.sum_(ad.mul(x, Tensor(weights)), axis=1)
    counts = np.maximum(mask.sum(axis=1), 1).astype(x.dtype)
    return ad.mul(total, Tensor((1.0 / counts)[:, None]))


def _level_block(x, mask, params, cfg, training=False, rng=None):
    h = ad.layer_norm(x, params.ln_g, params.ln_b, cfg.ln_eps)
    a = multi_head_attention(h, params, cfg, mask)
    if training and rng is not None:
        a = ad.dropout(a, cfg.dropout, rng, training)
    return gated_residual(a, params, cfg)


def encode_level(x, mask, params, cfg, training=False, rng=None):
    """One hierarchy level: (n, l, dim) -> (n, dim) pooled over real rows."""
    if x.ndim != 3:
        raise ad.DimensionError(f"encode_level wants (n, l, dim), got {x.shape}")
    return masked_mean(_level_block(x, mask, params, cfg, training, rng), mask)


def classify(h, head, cfg, training=False, rng=None):
    """Head MLP: hidden layer with GELU and dropout, sigmoid probability."""
    h, squeeze = (ad.reshape(h, (1,) + h.shape), True) if h.ndim == 1 else (h, False)
    z = ad.gelu(ad.add(ad.matmul(h, head.w1), head.b1))
    if training and rng is not None:
        z = ad.dropout(z, cfg.dropout, rng, training)
    logit = ad.add(ad.matmul(z, head.w2), head.b2)
    p = ad.sigmoid(logit)
    return ad.reshape(p, () if squeeze else (h.shape[0],))


class BgmHanModel:
    """Config + parameters + vocabulary, with batched forward passes."""

    def __init__(self, cfg, vocab, seed=0):
        if cfg.vocab_size == 0:
            cfg = replace(cfg, vocab_size=vocab.size)
        elif cfg.vocab_size != vocab.size:
            raise ValueError(
                f"config vocab_size {cfg.vocab_size} != vocabulary size {vocab.size}"
            )
        self.cfg = cfg
        self.vocab = vocab
        self.seed = seed
        self.params = init_params(cfg, seed)
        self._rng = np.random.Generator(np.random.PCG64([seed, 0xD201]))
        self.training = False

    def train_mode(self, on=True):
        self.training = bool(on)
        return self

    def reseed_dropout(self, seed):
        self._rng = np.random.Generator(np.random.PCG64([seed, 0xD201]))

    def profile_texts(self, profile):
        texts = list(profile.field_texts())
        if self.cfg.fields == len(texts) + 1:
            texts.append(profile.analysis or "")
        elif self.cfg.fields != len(texts):
            raise ValueError(f"model wants {self.cfg.fields} fields, profile has {len(texts)}")
        return texts

    def token_grids(self, profiles):
        """Precompute the (n, F, s, w) id and mask grids for a batch."""
        cfg = self.cfg
        n = len(profiles)
        ids = np.full((n, cfg.fields, cfg.sentences, cfg.tokens), PAD_ID, dtype=np.int64)
        mask = np.zeros((n, cfg.fields, cfg.sentences, cfg.tokens), dtype=bool)
        for i, p in enumerate(profiles):
            for f, text in enumerate(self.profile_texts(p)):
                ids[i, f], mask[i, f] = field_token_grid(text, self.vocab, cfg)
        return ids, mask

    def encode_fields(self, ids, mask):
        """(n, F, s, w) ids -> (n, F, d) field vectors."""
        cfg = self.cfg
        n, F, s, w = ids.shape
        # trim to the longest real extent in the batch; padding budget beyond
        # it cannot change the arithmetic
        s_real = mask.any(axis=-1).sum(axis=-1)
        smax = max(int(s_real.max(initial=0)), 1)
        wmax = max(int(mask.sum(axis=-1).max(initial=0)), 1)
        ids = ids[..., :smax, :wmax]
        mask = mask[..., :smax, :wmax]

        tok_x = ad.embedding(self.params.embedding, ids.reshape(n * F * smax, wmax))
        tok_mask = mask.reshape(n * F * smax, wmax)
        sent_vecs = encode_level(tok_x, tok_mask, self.params.token, cfg,
                                 self.training, self._rng)
        sent_x = ad.reshape(sent_vecs, (n * F, smax, cfg.dim))
        sent_mask = mask.any(axis=-1).reshape(n * F, smax)
        field_vecs = encode_level(sent_x, sent_mask, self.params.sentence, cfg,
                                  self.training, self._rng)
        return ad.reshape(field_vecs, (n, F, cfg.dim))

    def forward_batch(self, ids, mask):
        cfg = self.cfg
        n = ids.shape[0]
        hf = self.encode_fields(ids, mask)
        if cfg.field_stage:
            all_real = np.ones((n, cfg.fields), dtype=bool)
            hf = _level_block(hf, all_real, self.params.field_block, cfg,
                              self.training, self._rng)
        h = ad.reshape(hf, (n, cfg.fields * cfg.dim))
        return classify(h, self.params.head, cfg, self.training, self._rng)

    def predict_proba(self, profiles, batch_size=64):
        """Eval-mode probabilities; deterministic, no tape, no dropout."""
        probs = np.empty(len(profiles), dtype=np.float64)
        prev = self.training
        self.training = False
        try:
            for lo in range(0, len(profiles), batch_size):
                chunk = profiles[lo:lo + batch_size]
                ids, mask = self.token_grids(chunk)
                probs[lo:lo + len(chunk)] = self.forward_batch(ids, mask).data
        finally:
            self.training = prev
        return probs


def encode_profile(profile, vocab, params, cfg, training=False, rng=None):
    """Encode one profile: per-field vectors h_f plus their concatenation.

    Returns ({field_name: Tensor of shape (d,)}, Tensor of shape (fields*d,)).
    h comes straight from the sentence level, so each h_f depends only on its
    own field's text.
    """
    names = list(FIELD_ORDER)
    texts = list(profile.field_texts())
    if cfg.fields == len(texts) + 1:
        names.append("analysis")
        texts.append(profile.analysis or "")
    ids = np.full((1, cfg.fields, cfg.sentences, cfg.tokens), PAD_ID, dtype=np.int64)
    mask = np.zeros((1, cfg.fields, cfg.sentences, cfg.tokens), dtype=bool)
    for f, text in enumerate(texts):
        ids[0, f], mask[0, f] = field_token_grid(text, vocab, cfg)

    shell = BgmHanModel.__new__(BgmHanModel)
    shell.cfg = cfg
    shell.vocab = vocab
    shell.params = params
    shell.training = training
    shell._rng = rng
    hf = shell.encode_fields(ids, mask)
    fields = {name: ad.reshape(hf[0, f], (cfg.dim,)) for f, name in enumerate(names)}
    h = ad.reshape(hf, (cfg.fields * cfg.dim,))
    return fields, h


def save_checkpoint(path, model, vocab_path=None, extra=None):
    """Self-describing archive: manifest JSON plus raw little-endian buffers."""
    dtype = "<f4" if model.cfg.precision == "single" else "<f8"
    entries = []
    buffers = []
    offset = 0
    for name, t in model.params.named_tensors():
        raw = np.ascontiguousarray(t.data).astype(dtype, copy=False).tobytes()
        entries.append(
            {"name": name, "shape": list(t.data.shape), "offset": offset, "nbytes": len(raw)}
        )
        offset += len(raw)
        buffers.append(raw)
    manifest = {
        "format": _FORMAT,
        "config": asdict(model.cfg),
        "seed": model.seed,
        "dtype": dtype,
        "tensors": entries,
        "vocab": {
            "path": str(vocab_path) if vocab_path else None,
            "sha256": file_sha256(vocab_path) if vocab_path else None,
        },
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in buffers:
            fh.write(raw)


def load_checkpoint(path, vocab=None):
    """Rebuild a model from an archive.  Returns (model, manifest).

    If no vocabulary is passed, the manifest's recorded path is loaded and
    verified against its stored hash.
    """
    from .bpe import Vocabulary

    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(blob_len).decode())
        payload = fh.read()
    if manifest.get("format") != _FORMAT:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r}")
    cfg = ModelConfig(**manifest["config"])
    if vocab is None:
        vpath = manifest["vocab"]["path"]
        if not vpath:
            raise CheckpointError(f"{path}: checkpoint stores no vocab path; pass one")
        if manifest["vocab"]["sha256"] and file_sha256(vpath) != manifest["vocab"]["sha256"]:
            raise CheckpointError(f"{vpath}: vocabulary hash differs from checkpoint manifest")
        vocab = Vocabulary.load(vpath)
    if cfg.vocab_size != vocab.size:
        raise CheckpointError(
            f"{path}: checkpoint vocab_size {cfg.vocab_size} != vocabulary {vocab.size}"
        )
    model = BgmHanModel(cfg, vocab, seed=manifest.get("seed", 0))
    by_name = dict(model.params.named_tensors())
    seen = set()
    for entry in manifest["tensors"]:
        name = entry["name"]
        if name not in by_name:
            raise CheckpointError(f"{path}: unknown tensor {name!r}")
        t = by_name[name]
        if list(t.data.shape) != entry["shape"]:
            raise CheckpointError(
                f"{path}: tensor {name} shape {entry['shape']} != expected {list(t.data.shape)}"
            )
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated buffer for {name}")
        arr = np.frombuffer(raw, dtype=manifest["dtype"]).reshape(entry["shape"])
        t.data = arr.astype(cfg.np_dtype)
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    return model, manifest
