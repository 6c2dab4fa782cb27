"""From-scratch Siamese text encoder with a cosine regression head.

Architecture: hashing tokenizer -> embedding table -> mean pool -> affine
projection -> tanh. Two texts are encoded with the same parameters and the
cosine of their embeddings is regressed against a target score with MSE.
Gradients are computed analytically; training runs in double precision.

Determinism notes: dot products and norms are accumulated in a fixed
sequential order (plain Python loop) so results are bit-stable across runs
and match an independently written oracle with the same arithmetic order.
Matrix products go through numpy broadcast-and-reduce rather than BLAS so
thread count cannot perturb summation order.
"""
from __future__ import annotations

import hashlib
import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import atomic_write_bytes, child_seed

DEFAULT_VOCAB = 1 << 15
DEFAULT_DIM = 64
MIN_VOCAB = 1 << 10

CKPT_MAGIC = b"SLE1"
CKPT_VERSION = 1

_TOKEN_RUN = re.compile(r"[0-9a-zA-Z]+")


class EncoderError(ValueError):
    """Raised for invalid configs, divergence, or corrupt checkpoints."""


@dataclass(frozen=True)
class TokenizerConfig:
    vocab_size: int = DEFAULT_VOCAB
    hash_seed: int = 0
    lowercase: bool = True

    def __post_init__(self):
        v = self.vocab_size
        if v < MIN_VOCAB or v & (v - 1):
            raise EncoderError(f"vocab_size must be a power of two >= {MIN_VOCAB}, got {v}")


def tokenize(cfg: TokenizerConfig, text: str) -> list[int]:
    """Hash each alphanumeric run into [0, vocab_size)."""
    if cfg.lowercase:
        text = text.lower()
    mask = cfg.vocab_size - 1
    key = struct.pack("<Q", cfg.hash_seed & 0xFFFFFFFFFFFFFFFF)
    out = []
    for run in _TOKEN_RUN.findall(text):
        digest = hashlib.blake2b(run.encode("utf-8"), digest_size=8, key=key).digest()
        out.append(int.from_bytes(digest, "little") & mask)
    return out


@dataclass
class EncoderParams:
    embedding_table: np.ndarray
    projection_weight: np.ndarray
    projection_bias: np.ndarray

    @property
    def vocab_size(self) -> int:
        return self.embedding_table.shape[0]

    @property
    def dim(self) -> int:
        return self.embedding_table.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.embedding_table.copy(),
            self.projection_weight.copy(),
            self.projection_bias.copy(),
        )

    def identity_hash(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<II", self.vocab_size, self.dim))
        h.update(self.embedding_table.astype("<f8").tobytes())
        h.update(self.projection_weight.astype("<f8").tobytes())
        h.update(self.projection_bias.astype("<f8").tobytes())
        return h.hexdigest()


def init_params(cfg: TokenizerConfig, dim: int = DEFAULT_DIM, seed: int = 0) -> EncoderParams:
    if dim < 1:
        raise EncoderError(f"dim must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    v = cfg.vocab_size
    a = np.sqrt(6.0 / (v + dim))
    table = rng.uniform(-a, a, size=(v, dim))
    weight = np.eye(dim) + rng.uniform(-0.01, 0.01, size=(dim, dim))
    bias = np.zeros(dim)
    return EncoderParams(table, weight, bias)


def _affine(params: EncoderParams, pooled: np.ndarray) -> np.ndarray:
    # Broadcast multiply + reduce keeps summation order independent of any
    # BLAS threading decisions.
    return (params.projection_weight * pooled).sum(axis=1) + params.projection_bias


def embed(params: EncoderParams, cfg: TokenizerConfig, text: str) -> np.ndarray:
    tokens = tokenize(cfg, text)
    if not tokens:
        return np.zeros(params.dim)
    pooled = params.embedding_table[tokens].sum(axis=0) / len(tokens)
    out = np.tanh(_affine(params, pooled))
    if not np.all(np.isfinite(out)):
        raise EncoderError("non-finite embedding; parameters are corrupt or diverged")
    return out


def _cos_parts(u, v) -> tuple[float, float, float]:
    """Single sequential pass accumulating dot, |u|^2, |v|^2 in index order."""
    dot = 0.0
    nu = 0.0
    nv = 0.0
    for a, b in zip(u, v):
        dot += a * b
        nu += a * a
        nv += b * b
    return dot, nu, nv


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    if len(u) != len(v):
        raise EncoderError(f"dimension mismatch: {len(u)} vs {len(v)}")
    dot, nu, nv = _cos_parts(u.tolist(), v.tolist())
    norm_u = nu ** 0.5
    norm_v = nv ** 0.5
    if norm_u < 1e-12 or norm_v < 1e-12:
        return 0.0
    return dot / (norm_u * norm_v)


@dataclass
class EncoderGrads:
    embedding_table: np.ndarray
    projection_weight: np.ndarray
    projection_bias: np.ndarray
    touched_rows: list[int]


@dataclass
class _Forward:
    tokens_a: list[int]
    tokens_b: list[int]
    pooled_a: np.ndarray | None
    pooled_b: np.ndarray | None
    emb_a: np.ndarray
    emb_b: np.ndarray
    sim: float
    parts: tuple[float, float, float]


def _forward_one(params: EncoderParams, cfg: TokenizerConfig, cbd: str, itd: str) -> _Forward:
    d = params.dim
    ta = tokenize(cfg, cbd)
    tb = tokenize(cfg, itd)
    pa = params.embedding_table[ta].sum(axis=0) / len(ta) if ta else None
    pb = params.embedding_table[tb].sum(axis=0) / len(tb) if tb else None
    ea = np.tanh(_affine(params, pa)) if pa is not None else np.zeros(d)
    eb = np.tanh(_affine(params, pb)) if pb is not None else np.zeros(d)
    dot, nu, nv = _cos_parts(ea.tolist(), eb.tolist())
    if nu ** 0.5 < 1e-12 or nv ** 0.5 < 1e-12:
        sim = 0.0
    else:
        sim = dot / (nu ** 0.5 * nv ** 0.5)
    return _Forward(ta, tb, pa, pb, ea, eb, sim, (dot, nu, nv))


def batch_loss(params: EncoderParams, cfg: TokenizerConfig, batch) -> float:
    if not batch:
        raise EncoderError("empty batch")
    total = 0.0
    for t in batch:
        fwd = _forward_one(params, cfg, t.cbd, t.itd)
        diff = fwd.sim - t.score
        total += diff * diff
    return total / len(batch)


def batch_gradients(
    params: EncoderParams, cfg: TokenizerConfig, batch
) -> tuple[float, EncoderGrads]:
    """Analytic gradients of batch_loss. Returns (loss, grads)."""
    if not batch:
        raise EncoderError("empty batch")
    d = params.dim
    g_table = np.zeros_like(params.embedding_table)
    g_weight = np.zeros((d, d))
    g_bias = np.zeros(d)
    touched: set[int] = set()
    total = 0.0

    for idx, t in enumerate(batch):
        fwd = _forward_one(params, cfg, t.cbd, t.itd)
        if not np.isfinite(fwd.sim):
            raise EncoderError(f"non-finite similarity at batch item {idx} ({t.company_id})")
        diff = fwd.sim - t.score
        total += diff * diff
        g_sim = 2.0 * diff / len(batch)

        dot, nu, nv = fwd.parts
        norm_u = nu ** 0.5
        norm_v = nv ** 0.5
        if norm_u < 1e-12 or norm_v < 1e-12:
            continue
        inv = 1.0 / (norm_u * norm_v)
        d_ea = g_sim * (fwd.emb_b * inv - (dot / nu) * fwd.emb_a * inv)
        d_eb = g_sim * (fwd.emb_a * inv - (dot / nv) * fwd.emb_b * inv)

        for tokens, pooled, emb, d_emb in (
            (fwd.tokens_a, fwd.pooled_a, fwd.emb_a, d_ea),
            (fwd.tokens_b, fwd.pooled_b, fwd.emb_b, d_eb),
        ):
            if pooled is None:
                continue
            d_z = d_emb * (1.0 - emb * emb)
            g_weight += np.outer(d_z, pooled)
            g_bias += d_z
            d_pooled = (params.projection_weight * d_z[:, None]).sum(axis=0)
            np.add.at(g_table, tokens, d_pooled / len(tokens))
            touched.update(tokens)

    return total / len(batch), EncoderGrads(g_table, g_weight, g_bias, sorted(touched))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 100
    optimizer: str = "adam"
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise EncoderError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.validation_fraction < 0.5:
            raise EncoderError(
                f"validation_fraction {self.validation_fraction} outside [0, 0.5)"
            )
        if self.optimizer not in ("adam", "sgd"):
            raise EncoderError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise EncoderError(f"batch_size must be positive, got {self.batch_size}")


class _Adam:
    """Adaptive-moment updates; table rows update lazily (touched rows only)."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: EncoderParams, lr: float):
        self.lr = lr
        self.t = 0
        self.m_table = np.zeros_like(params.embedding_table)
        self.v_table = np.zeros_like(params.embedding_table)
        self.m_weight = np.zeros_like(params.projection_weight)
        self.v_weight = np.zeros_like(params.projection_weight)
        self.m_bias = np.zeros_like(params.projection_bias)
        self.v_bias = np.zeros_like(params.projection_bias)

    def step(self, params: EncoderParams, grads: EncoderGrads) -> None:
        self.t += 1
        c1 = 1.0 - self.BETA1 ** self.t
        c2 = 1.0 - self.BETA2 ** self.t

        rows = grads.touched_rows
        if rows:
            g = grads.embedding_table[rows]
            self.m_table[rows] = self.BETA1 * self.m_table[rows] + (1 - self.BETA1) * g
            self.v_table[rows] = self.BETA2 * self.v_table[rows] + (1 - self.BETA2) * g * g
            m_hat = self.m_table[rows] / c1
            v_hat = self.v_table[rows] / c2
            params.embedding_table[rows] -= self.lr * m_hat / (np.sqrt(v_hat) + self.EPS)

        for m, v, g, target in (
            (self.m_weight, self.v_weight, grads.projection_weight, params.projection_weight),
            (self.m_bias, self.v_bias, grads.projection_bias, params.projection_bias),
        ):
            m *= self.BETA1
            m += (1 - self.BETA1) * g
            v *= self.BETA2
            v += (1 - self.BETA2) * g * g
            target -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.EPS)


class _Sgd:
    def __init__(self, params: EncoderParams, lr: float):
        self.lr = lr

    def step(self, params: EncoderParams, grads: EncoderGrads) -> None:
        rows = grads.touched_rows
        if rows:
            params.embedding_table[rows] -= self.lr * grads.embedding_table[rows]
        params.projection_weight -= self.lr * grads.projection_weight
        params.projection_bias -= self.lr * grads.projection_bias


def train(
    triplets: list,
    tcfg: TrainConfig,
    tokenizer: TokenizerConfig,
    warm_start: EncoderParams | None = None,
    dim: int = DEFAULT_DIM,
    on_epoch=None,
) -> tuple[EncoderParams, list[dict]]:
    """Train the encoder; returns (best-validation parameters, epoch history)."""
    if warm_start is not None:
        params = warm_start.copy()
        if params.vocab_size != tokenizer.vocab_size:
            raise EncoderError(
                f"warm start vocab {params.vocab_size} != tokenizer vocab {tokenizer.vocab_size}"
            )
    else:
        params = init_params(tokenizer, dim=dim, seed=child_seed(tcfg.seed, "init"))
    if tcfg.epochs == 0:
        return params, []
    if len(triplets) < 2 * tcfg.batch_size:
        raise EncoderError(
            f"need at least {2 * tcfg.batch_size} triplets, got {len(triplets)}"
        )

    import random as _random

    order = list(range(len(triplets)))
    split_rng = _random.Random(child_seed(tcfg.seed, "split"))
    split_rng.shuffle(order)
    n_val = int(round(tcfg.validation_fraction * len(triplets)))
    val_set = [triplets[k] for k in order[:n_val]]
    train_set = [triplets[k] for k in order[n_val:]]
    if not val_set:
        val_set = train_set

    opt = _Adam(params, tcfg.learning_rate) if tcfg.optimizer == "adam" else _Sgd(
        params, tcfg.learning_rate
    )

    history: list[dict] = []
    best_val = float("inf")
    best_params = params.copy()
    stale = 0
    for epoch in range(tcfg.epochs):
        epoch_rng = _random.Random(child_seed(tcfg.seed, "epoch", epoch))
        idx = list(range(len(train_set)))
        epoch_rng.shuffle(idx)
        running = 0.0
        batches = 0
        for start in range(0, len(idx), tcfg.batch_size):
            batch = [train_set[k] for k in idx[start : start + tcfg.batch_size]]
            loss, grads = batch_gradients(params, tokenizer, batch)
            if not np.isfinite(loss):
                raise EncoderError(f"training diverged at epoch {epoch}, batch {batches}")
            opt.step(params, grads)
            running += loss
            batches += 1
        val_loss = batch_loss(params, tokenizer, val_set)
        if not np.isfinite(val_loss):
            raise EncoderError(f"validation loss diverged at epoch {epoch}")
        history.append(
            {"epoch": epoch, "train_loss": running / batches, "val_loss": val_loss}
        )
        if on_epoch is not None:
            on_epoch(epoch, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if tcfg.patience and stale >= tcfg.patience:
                break
    return best_params, history


def save_checkpoint(
    params: EncoderParams, tokenizer: TokenizerConfig, path: str | Path
) -> None:
    header = CKPT_MAGIC + struct.pack(
        "<IIIQ", CKPT_VERSION, params.vocab_size, params.dim,
        tokenizer.hash_seed & 0xFFFFFFFFFFFFFFFF,
    )
    payload = (
        header
        + params.embedding_table.astype("<f8").tobytes()
        + params.projection_weight.astype("<f8").tobytes()
        + params.projection_bias.astype("<f8").tobytes()
    )
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    atomic_write_bytes(path, payload + struct.pack("<I", crc))


def load_checkpoint(
    path: str | Path,
    expect_vocab: int | None = None,
    expect_dim: int | None = None,
) -> tuple[EncoderParams, TokenizerConfig]:
    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != CKPT_MAGIC:
        raise EncoderError(f"{path}: not a checkpoint file")
    stored_crc = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise EncoderError(f"{path}: checksum mismatch, file is corrupt")
    version, vocab, dim, hash_seed = struct.unpack("<IIIQ", raw[4:24])
    if version != CKPT_VERSION:
        raise EncoderError(f"{path}: unsupported format version {version}")
    if expect_vocab is not None and vocab != expect_vocab:
        raise EncoderError(f"{path}: vocab size {vocab}, expected {expect_vocab}")
    if expect_dim is not None and dim != expect_dim:
        raise EncoderError(f"{path}: dim {dim}, expected {expect_dim}")

    expected = 24 + 8 * (vocab * dim + dim * dim + dim) + 4
    if len(raw) != expected:
        raise EncoderError(f"{path}: size {len(raw)} does not match header shapes")
    off = 24
    table = np.frombuffer(raw, dtype="<f8", count=vocab * dim, offset=off).reshape(vocab, dim)
    off += 8 * vocab * dim
    weight = np.frombuffer(raw, dtype="<f8", count=dim * dim, offset=off).reshape(dim, dim)
    off += 8 * dim * dim
    bias = np.frombuffer(raw, dtype="<f8", count=dim, offset=off)
    params = EncoderParams(table.copy(), weight.copy(), bias.copy())
    return params, TokenizerConfig(vocab_size=vocab, hash_seed=hash_seed)
