"""Two-stream transformer denoiser with bipartite graph interaction.

Each skeleton stream goes through embedding, positional encoding, and a
stack of identical layers: efficient self-attention, cross-attention to
the encoded class label, the bipartite graph block joining the streams,
and a GELU feed-forward network.  Every attention/FFN sublayer output is
modulated by a stylization block carrying the diffusion timestep and the
condition, then added back through a residual.  After the stack the two
streams are concatenated per frame and mapped to a noise estimate with
the same shape as the input.

All residual-branch output maps start at zero, so a freshly initialized
model is an affine function of its input: a stable starting point for
diffusion training.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, affine, concat, gelu, layer_norm, softmax
from .bigraph import BipartiteGraphParams, bigraph_forward
from .errors import CapacityError, ConfigurationError, ShapeError, VocabularyError
from .optim import ParameterStore


@dataclass
class DenoiserConfig:
    k: int = 5                      # joints per skeleton
    d_l: int = 64                   # per-stream latent width
    num_layers: int = 8
    num_heads: int = 8
    text_layers: int = 4
    text_heads: int = 4
    max_len: int = 64               # positional-encoding horizon
    graph_len: int = 0              # 0 -> use max_len
    vocab: list = field(default_factory=list)
    bigraph_enabled: bool = True
    tie_streams: bool = True
    graph_channels: int = 0         # 0 -> d_l // 4
    ffn_mult: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.d_l % self.num_heads:
            raise ConfigurationError(
                f"d_l={self.d_l} not divisible by num_heads={self.num_heads}"
            )
        if self.k < 2:
            raise ConfigurationError(f"need k >= 2 joints, got {self.k}")
        if not self.graph_len:
            self.graph_len = self.max_len
        if not self.graph_channels:
            self.graph_channels = max(1, self.d_l // 4)

    def to_dict(self):
        return {
            "k": self.k, "d_l": self.d_l, "num_layers": self.num_layers,
            "num_heads": self.num_heads, "text_layers": self.text_layers,
            "text_heads": self.text_heads, "max_len": self.max_len,
            "graph_len": self.graph_len, "vocab": list(self.vocab),
            "bigraph_enabled": self.bigraph_enabled, "tie_streams": self.tie_streams,
            "graph_channels": self.graph_channels, "ffn_mult": self.ffn_mult,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def positional_encoding(N, d):
    """Sinusoidal frame-position code, values in [-1, 1]."""
    if d % 2:
        raise ConfigurationError(f"positional encoding width must be even, got {d}")
    pos = np.arange(N)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    pe = np.zeros((N, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


class DenoiserWeights:
    """All trainable parameters, addressable by dotted name."""

    def __init__(self, config, rng):
        self.config = config
        self.store = ParameterStore()
        self.bigraph_layers = []
        c = config
        d, dt = c.d_l, c.d_l
        init = lambda *shape: rng.normal(0.0, 0.02, size=shape)

        # label/text encoder
        self.store.add("text.tok_emb", init(max(len(c.vocab), 1), dt))
        for i in range(c.text_layers):
            p = f"text.{i}"
            self._norm(f"{p}.ln1", dt)
            for key in ("q", "k", "v", "o"):
                self._affine(f"{p}.{key}", dt, dt, init)
            self._norm(f"{p}.ln2", dt)
            self._affine(f"{p}.ffn1", dt, c.ffn_mult * dt, init)
            self._affine(f"{p}.ffn2", c.ffn_mult * dt, dt, init)

        # timestep embedding MLP
        self._affine("time.1", d, d, init)
        self._affine("time.2", d, d, init)

        # skeleton stream(s)
        for sp in self.stream_prefixes():
            self._affine(f"{sp}.embed", 3 * c.k, d, init)
            for i in range(c.num_layers):
                p = f"{sp}.{i}"
                self._norm(f"{p}.ln1", d)
                self._affine(f"{p}.self.q", d, d, init)
                self._affine(f"{p}.self.k", d, d, init)
                self._affine(f"{p}.self.v", d, d, init)
                self._affine(f"{p}.self.o", d, d, None)   # zero: residual start
                self._styl(f"{p}.styl1", d + dt, d)
                self._norm(f"{p}.ln2", d)
                self._affine(f"{p}.cross.q", d, d, init)
                self._affine(f"{p}.cross.k", dt, d, init)
                self._affine(f"{p}.cross.v", dt, d, init)
                self._affine(f"{p}.cross.o", d, d, None)
                self._styl(f"{p}.styl2", d + dt, d)
                self._norm(f"{p}.ln3", d)
                self._affine(f"{p}.ffn1", d, c.ffn_mult * d, init)
                self._affine(f"{p}.ffn2", c.ffn_mult * d, d, None)
                self._styl(f"{p}.styl3", d + dt, d)

        if c.bigraph_enabled:
            for i in range(c.num_layers):
                self.bigraph_layers.append(
                    BipartiteGraphParams(
                        self.store, f"layer{i}.bigraph", d, c.graph_channels,
                        c.graph_len, rng,
                    )
                )

        self._affine("final", 2 * d, 6 * c.k, init)

    def stream_prefixes(self):
        return ("stream",) if self.config.tie_streams else ("stream1", "stream2")

    def stream_prefix(self, which):
        return "stream" if self.config.tie_streams else f"stream{which}"

    def _affine(self, name, n_in, n_out, init):
        w = np.zeros((n_in, n_out)) if init is None else init(n_in, n_out)
        self.store.add(f"{name}.w", w)
        self.store.add(f"{name}.b", np.zeros(n_out))

    def _norm(self, name, n):
        self.store.add(f"{name}.g", np.ones(n))
        self.store.add(f"{name}.b", np.zeros(n))

    def _styl(self, name, n_in, n_out):
        self._affine(f"{name}.scale", n_in, n_out, None)
        self._affine(f"{name}.shift", n_in, n_out, None)

    def __getitem__(self, name):
        return self.store[name]

    def param_count(self):
        return self.store.count()


def _split_heads(x, heads):
    n, d = x.shape
    return x.reshape(n, heads, d // heads).permute(1, 0, 2)


def _merge_heads(x):
    h, n, dh = x.shape
    return x.permute(1, 0, 2).reshape(n, h * dh)


def efficient_attention(Q, K, V, heads):
    """Linear-cost attention: rho_q(Q) @ (rho_k(K)^T @ V) per head.

    rho_q is a softmax over the feature axis of each query row; rho_k a
    softmax over the sequence axis of each key column.  Heads are
    concatenated; no output projection is applied here.
    """
    for t, label in ((Q, "Q"), (K, "K"), (V, "V")):
        if t.shape[-1] % heads:
            raise ConfigurationError(
                f"{label} width {t.shape[-1]} not divisible by {heads} heads"
            )
    q = softmax(_split_heads(Q, heads), axis=-1)
    k = softmax(_split_heads(K, heads), axis=-2)
    context = k.swapaxes(-1, -2) @ _split_heads(V, heads)
    return _merge_heads(q @ context)


def scaled_dot_attention(Q, K, V, heads):
    """Standard softmax(QK^T/sqrt(dh))V multi-head attention."""
    if Q.shape[-1] % heads:
        raise ConfigurationError(f"width {Q.shape[-1]} not divisible by {heads} heads")
    dh = Q.shape[-1] // heads
    q, k, v = (_split_heads(t, heads) for t in (Q, K, V))
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    return _merge_heads(softmax(scores, axis=-1) @ v)


def _proj(x, weights, name):
    return affine(x, weights[f"{name}.w"], weights[f"{name}.b"])


def _ln(x, weights, name):
    return layer_norm(x, weights[f"{name}.g"], weights[f"{name}.b"])


def stylization(h, e, weights, name):
    """Timestep/condition modulation: h * (1 + scale(e)) + shift(e)."""
    if h.shape[-1] != weights[f"{name}.scale.w"].shape[-1]:
        raise ShapeError(f"stylization width mismatch for {name}: {h.shape}")
    scale = _proj(e, weights, f"{name}.scale")
    shift = _proj(e, weights, f"{name}.shift")
    return h * (1.0 + scale) + shift


def embedding_lookup(emb, ids):
    return concat([emb.narrow(0, i, 1) for i in ids], axis=0)


def encode_condition(label_tokens, weights, config):
    """Run the label tokens through the small transformer encoder."""
    vocab_size = weights["text.tok_emb"].shape[0]
    for tok in label_tokens:
        if not 0 <= tok < vocab_size:
            raise VocabularyError(f"token id {tok} outside vocabulary of {vocab_size}")
    if not label_tokens:
        raise VocabularyError("empty token sequence")
    x = embedding_lookup(weights["text.tok_emb"], label_tokens)
    x = x + Tensor(positional_encoding(len(label_tokens), config.d_l))
    for i in range(config.text_layers):
        p = f"text.{i}"
        h = _ln(x, weights, f"{p}.ln1")
        att = scaled_dot_attention(
            _proj(h, weights, f"{p}.q"),
            _proj(h, weights, f"{p}.k"),
            _proj(h, weights, f"{p}.v"),
            config.text_heads,
        )
        x = x + _proj(att, weights, f"{p}.o")
        h = _ln(x, weights, f"{p}.ln2")
        x = x + _proj(gelu(_proj(h, weights, f"{p}.ffn1")), weights, f"{p}.ffn2")
    return x


def timestep_embedding(t, weights, config):
    """Sinusoidal code of the diffusion step through a two-layer GELU map."""
    if t < 1:
        raise IndexError(f"diffusion step must be >= 1, got {t}")
    base = Tensor(positional_encoding(t + 1, config.d_l)[t])
    return _proj(gelu(_proj(base, weights, "time.1")), weights, "time.2")


def _dropout(x, p, rng):
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * Tensor(keep)


def _ffn(x, e, weights, prefix, styl_name, config, rng):
    h = _ln(x, weights, f"{prefix}.ln3")
    h = gelu(_proj(h, weights, f"{prefix}.ffn1"))
    h = _dropout(h, config.dropout, rng)
    h = _proj(h, weights, f"{prefix}.ffn2")
    return x + stylization(h, e, weights, styl_name)


def decoder_layer(s1, s2, cond, e, weights, layer, config, rng=None):
    """One stack layer: self-attn, cross-attn to the condition, bipartite
    graph across streams, FFN; each sublayer stylized and residual."""
    if s1.shape != s2.shape:
        raise ShapeError(f"stream shapes differ: {s1.shape} vs {s2.shape}")
    outs = []
    for which, s in ((1, s1), (2, s2)):
        p = f"{weights.stream_prefix(which)}.{layer}"
        h = _ln(s, weights, f"{p}.ln1")
        att = efficient_attention(
            _proj(h, weights, f"{p}.self.q"),
            _proj(h, weights, f"{p}.self.k"),
            _proj(h, weights, f"{p}.self.v"),
            config.num_heads,
        )
        s = s + stylization(_proj(att, weights, f"{p}.self.o"), e, weights, f"{p}.styl1")
        h = _ln(s, weights, f"{p}.ln2")
        att = efficient_attention(
            _proj(h, weights, f"{p}.cross.q"),
            _proj(cond, weights, f"{p}.cross.k"),
            _proj(cond, weights, f"{p}.cross.v"),
            config.num_heads,
        )
        s = s + stylization(_proj(att, weights, f"{p}.cross.o"), e, weights, f"{p}.styl2")
        outs.append(s)
    s1, s2 = outs

    if config.bigraph_enabled:
        s1, s2 = bigraph_forward(s1, s2, weights.bigraph_layers[layer])

    p1 = f"{weights.stream_prefix(1)}.{layer}"
    p2 = f"{weights.stream_prefix(2)}.{layer}"
    s1 = _ffn(s1, e, weights, p1, f"{p1}.styl3", config, rng)
    s2 = _ffn(s2, e, weights, p2, f"{p2}.styl3", config, rng)
    return s1, s2


def predict_noise(x_t, t, cond, weights, config, rng=None):
    """Estimate the injected noise for a two-person sequence at step t."""
    x_t = Tensor._lift(x_t)
    if x_t.ndim != 4 or x_t.shape[1:] != (config.k, 3, 2):
        raise ShapeError(
            f"expected shape (N, {config.k}, 3, 2), got {tuple(x_t.shape)}"
        )
    N = x_t.shape[0]
    if N > config.max_len:
        raise CapacityError(f"sequence length {N} exceeds max_len {config.max_len}")
    if config.bigraph_enabled and N > config.graph_len:
        raise CapacityError(f"sequence length {N} exceeds graph_len {config.graph_len}")

    pe = Tensor(positional_encoding(N, config.d_l))
    e = concat([timestep_embedding(t, weights, config), cond.mean(axis=0)], axis=0)

    streams = []
    for which in (1, 2):
        flat = x_t.narrow(3, which - 1, 1).reshape(N, 3 * config.k)
        sp = weights.stream_prefix(which)
        streams.append(_proj(flat, weights, f"{sp}.embed") + pe)
    s1, s2 = streams
    for layer in range(config.num_layers):
        s1, s2 = decoder_layer(s1, s2, cond, e, weights, layer, config, rng)

    out = _proj(concat([s1, s2], axis=1), weights, "final")
    return out.reshape(N, 2, config.k, 3).permute(0, 2, 3, 1)
