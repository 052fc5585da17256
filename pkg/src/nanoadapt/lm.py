"""A tiny causal transformer decoder fed with [visual tokens | text tokens]."""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DimensionError, LengthError
from .tensor import (
    SplitMix64,
    Tensor,
    concat_cols,
    concat_rows,
    cross_entropy_rows,
    gelu,
    layer_norm,
    linear,
    matmul,
    scale,
    softmax_rows,
    take_cols,
    take_rows,
    transpose,
)

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"


class Vocab:
    """Bijective token <-> id map with PAD, BOS and EOS at ids 0, 1, 2."""

    def __init__(self, tokens):
        self.tokens = [PAD, BOS, EOS] + sorted(set(tokens) - {PAD, BOS, EOS})
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def from_sentences(cls, sentences):
        return cls(tok for s in sentences for tok in s)

    def __len__(self):
        return len(self.tokens)

    @property
    def bos(self):
        return self.ids[BOS]

    @property
    def eos(self):
        return self.ids[EOS]

    def encode(self, tokens):
        try:
            return [self.ids[t] for t in tokens]
        except KeyError as exc:
            raise LengthError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        return [self.tokens[i] for i in ids]


@dataclass
class ToyLmConfig:
    vocab_size: int = 32
    d_model: int = 32
    layers: int = 2
    heads: int = 2
    max_seq_len: int = 64
    ff_mult: int = 4
    eps: float = 1e-5

    def validate(self):
        if min(self.vocab_size, self.d_model, self.layers, self.heads, self.max_seq_len, self.ff_mult) < 1:
            raise ConfigError("LM dimensions must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        return self


def sinusoidal_positions(length, dim):
    pos = np.arange(length)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return table


class ToyLm:
    """Pre-LayerNorm decoder: token embedding, ``layers`` causal blocks, vocab head."""

    def __init__(self, config, seed=0):
        self.config = config.validate()
        rng = SplitMix64(seed)
        d, f, v = config.d_model, config.ff_mult * config.d_model, config.vocab_size

        def uni(fan_in, shape):
            b = 1.0 / math.sqrt(fan_in)
            return Tensor(rng.uniform(-b, b, shape), requires_grad=True)

        def const(value, n):
            return Tensor(np.full(n, value), requires_grad=True)

        p = {"tok_emb": uni(d, (v, d))}
        for i in range(config.layers):
            p.update({
                f"b{i}.ln1_g": const(1.0, d), f"b{i}.ln1_b": const(0.0, d),
                f"b{i}.qkv_w": uni(d, (d, 3 * d)), f"b{i}.qkv_b": const(0.0, 3 * d),
                f"b{i}.out_w": uni(d, (d, d)), f"b{i}.out_b": const(0.0, d),
                f"b{i}.ln2_g": const(1.0, d), f"b{i}.ln2_b": const(0.0, d),
                f"b{i}.fc1_w": uni(d, (d, f)), f"b{i}.fc1_b": const(0.0, f),
                f"b{i}.fc2_w": uni(f, (f, d)), f"b{i}.fc2_b": const(0.0, d),
            })
        p.update({"lnf_g": const(1.0, d), "lnf_b": const(0.0, d),
                  "head_w": uni(d, (d, v)), "head_b": const(0.0, v)})
        self.params = p
        self._positions = sinusoidal_positions(config.max_seq_len, d)

    def tensors(self):
        return self.params

    def embed_tokens(self, ids):
        return take_rows(self.params["tok_emb"], ids)

    def positions(self, length):
        return Tensor(self._positions[:length])

    def _attention(self, x, i):
        p, cfg = self.params, self.config
        t, d = x.shape
        dh = d // cfg.heads
        qkv = linear(x, p[f"b{i}.qkv_w"], p[f"b{i}.qkv_b"])
        mask = np.tril(np.ones((t, t), dtype=bool))
        heads = []
        for h in range(cfg.heads):
            q = take_cols(qkv, h * dh, (h + 1) * dh)
            k = take_cols(qkv, d + h * dh, d + (h + 1) * dh)
            v = take_cols(qkv, 2 * d + h * dh, 2 * d + (h + 1) * dh)
            att = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dh)), mask)
            heads.append(matmul(att, v))
        out = heads[0] if len(heads) == 1 else concat_cols(heads)
        return linear(out, p[f"b{i}.out_w"], p[f"b{i}.out_b"])

    def forward(self, seq):
        """(T, d_model) embedded sequence -> (T, vocab) logits."""
        p, eps = self.params, self.config.eps
        if seq.ndim != 2 or seq.shape[1] != self.config.d_model:
            raise DimensionError(f"expected (T, {self.config.d_model}) sequence, got {seq.shape}")
        x = seq
        for i in range(self.config.layers):
            x = x + self._attention(layer_norm(x, p[f"b{i}.ln1_g"], p[f"b{i}.ln1_b"], eps), i)
            hid = gelu(linear(layer_norm(x, p[f"b{i}.ln2_g"], p[f"b{i}.ln2_b"], eps), p[f"b{i}.fc1_w"], p[f"b{i}.fc1_b"]))
            x = x + linear(hid, p[f"b{i}.fc2_w"], p[f"b{i}.fc2_b"])
        return linear(layer_norm(x, p["lnf_g"], p["lnf_b"], eps), p["head_w"], p["head_b"])


def build_multimodal_sequence(vis, text_ids, lm):
    """Concatenate visual embeddings with position-encoded text embeddings.

    Positions count from the first text token, so text positions do not
    depend on the visual prefix length. Returns the (Nv + T, d_model)
    sequence and a boolean mask that is True on the T supervised positions.
    """
    text_ids = list(text_ids)
    if not text_ids:
        raise LengthError("empty text: nothing to supervise")
    n_vis = 0 if vis is None else vis.shape[0]
    total = n_vis + len(text_ids)
    if total > lm.config.max_seq_len:
        raise LengthError(f"sequence length {total} exceeds max_seq_len={lm.config.max_seq_len}")
    text = lm.embed_tokens(text_ids) + lm.positions(len(text_ids))
    seq = text if vis is None else concat_rows([vis, text])
    mask = np.zeros(total, dtype=bool)
    mask[n_vis:] = True
    return seq, mask


def clm_loss(logits, targets):
    """Mean negative log-likelihood of each target token."""
    return cross_entropy_rows(logits, targets)


def caption_logits(lm, vis, input_ids):
    """Logits at the supervised text positions."""
    seq, mask = build_multimodal_sequence(vis, input_ids, lm)
    logits = lm.forward(seq)
    start = int(np.argmax(mask))
    return take_rows(logits, np.arange(start, start + len(input_ids)))
