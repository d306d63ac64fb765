"""Text and mel encoders projecting both sides into a shared hidden space."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .params import ParameterStore


@dataclass
class EncoderConfig:
    vocab_size: int = 64
    model_dim: int = 64
    heads: int = 2
    ffn_hidden: int = 128
    fft_blocks: int = 1
    conv_kernel: int = 3
    mel_channels: int = 80
    mel_cnn_channels: int = 32
    mel_dilation: int = 2
    dropout: float = 0.1
    fft_dropout: bool = True

    def __post_init__(self):
        dims = ("vocab_size", "model_dim", "heads", "ffn_hidden", "conv_kernel",
                "mel_channels", "mel_cnn_channels", "mel_dilation")
        for name in dims:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.fft_blocks < 0:
            raise ValueError("fft_blocks must be >= 0")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd for same-length padding")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)


def mel_receptive_field(config: EncoderConfig) -> int:
    """Frames seen by one output of the two dilated convolutions."""
    return 1 + 2 * (config.conv_kernel - 1) * config.mel_dilation


# -- parameter initialisation -------------------------------------------------


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _add_linear(store, rng, name, n_in, n_out):
    store.add(f"{name}.w", _glorot(rng, n_in, n_out, (n_in, n_out)))
    store.add(f"{name}.b", np.zeros(n_out))


def _add_conv(store, rng, name, k, n_in, n_out):
    store.add(f"{name}.w", _glorot(rng, k * n_in, k * n_out, (k, n_in, n_out)))
    store.add(f"{name}.b", np.zeros(n_out))


def _add_norm(store, name, d):
    store.add(f"{name}.g", np.ones(d))
    store.add(f"{name}.b", np.zeros(d))


def _add_attention(store, rng, name, d):
    for proj in ("q", "k", "v", "o"):
        _add_linear(store, rng, f"{name}.{proj}", d, d)
    _add_norm(store, f"{name}.norm", d)


def init_encoder_params(store: ParameterStore, config: EncoderConfig, rng: np.random.Generator) -> None:
    d = config.model_dim
    store.add("text.embed", rng.normal(0.0, 1.0, size=(config.vocab_size, d)))
    store.add("text.pe_scale", np.array(1.0))
    for n in range(config.fft_blocks):
        block = f"text.block{n}"
        _add_attention(store, rng, f"{block}.attn", d)
        _add_conv(store, rng, f"{block}.ffn1", config.conv_kernel, d, config.ffn_hidden)
        _add_conv(store, rng, f"{block}.ffn2", config.conv_kernel, config.ffn_hidden, d)
        _add_norm(store, f"{block}.ffn_norm", d)
    c = config.mel_cnn_channels
    _add_linear(store, rng, "mel.pre", config.mel_channels, c)
    _add_conv(store, rng, "mel.conv0", config.conv_kernel, c, c)
    _add_conv(store, rng, "mel.conv1", config.conv_kernel, c, c)
    _add_linear(store, rng, "mel.post", c, d)
    store.add("mel.pe_scale", np.array(1.0))
    _add_attention(store, rng, "mel.attn", d)


# -- building blocks ----------------------------------------------------------


def _linear(x, p, name):
    return ad.matmul(x, p[f"{name}.w"]) + p[f"{name}.b"]


def _conv(x, p, name, dilation=1):
    return ad.conv1d(x, p[f"{name}.w"], p[f"{name}.b"], dilation)


def _norm(x, p, name):
    return ad.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def _self_attention(x, p, name, heads, rate, rng):
    d = x.shape[1]
    dh = d // heads
    q = _linear(x, p, f"{name}.q")
    k = _linear(x, p, f"{name}.k")
    v = _linear(x, p, f"{name}.v")
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = ad.slice_cols(q, lo, hi), ad.slice_cols(k, lo, hi), ad.slice_cols(v, lo, hi)
        w = ad.softmax(ad.mul(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(dh)))
        outs.append(ad.matmul(w, vh))
    att = outs[0] if heads == 1 else ad.concat(outs, axis=1)
    att = ad.dropout(_linear(att, p, f"{name}.o"), rate, rng)
    return _norm(x + att, p, f"{name}.norm")


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoid_table(length: int, dim: int) -> np.ndarray:
    key = (length, dim)
    if key not in _PE_CACHE:
        pos = np.arange(length)[:, None]
        rate = np.power(10000.0, -(np.arange(dim) // 2 * 2) / dim)
        ang = pos * rate[None, :]
        table = np.where(np.arange(dim) % 2 == 0, np.sin(ang), np.cos(ang))
        table.setflags(write=False)
        _PE_CACHE[key] = table
    return _PE_CACHE[key]


def scaled_positional_embedding(length: int, dim: int, scale) -> Tensor:
    """Sinusoidal position table times a (learnable) scalar."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    return ad.scale(sinusoid_table(length, dim), scale)


# -- encoders -----------------------------------------------------------------


def encode_text(tokens, params: dict[str, Tensor], config: EncoderConfig,
                rng: np.random.Generator | None = None) -> Tensor:
    """Token ids -> (I, model_dim) hidden states.

    ``rng`` enables dropout (training); pass None for deterministic inference.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 1:
        raise ValueError("need a non-empty 1-D token sequence")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        bad = tokens[(tokens < 0) | (tokens >= config.vocab_size)][0]
        raise ValueError(f"unknown token id {int(bad)} (vocabulary size {config.vocab_size})")
    rate = config.dropout if config.fft_dropout else 0.0
    x = ad.embedding(params["text.embed"], tokens)
    x = x + scaled_positional_embedding(len(tokens), config.model_dim, params["text.pe_scale"])
    for n in range(config.fft_blocks):
        block = f"text.block{n}"
        x = _self_attention(x, params, f"{block}.attn", config.heads, rate, rng)
        f = ad.relu(_conv(x, params, f"{block}.ffn1"))
        f = ad.dropout(_conv(f, params, f"{block}.ffn2"), rate, rng)
        x = _norm(x + f, params, f"{block}.ffn_norm")
    return x


def encode_mel(mel, params: dict[str, Tensor], config: EncoderConfig,
               rng: np.random.Generator | None = None) -> Tensor:
    """(J, mel_channels) frames -> (J, model_dim) hidden states."""
    mel = mel if isinstance(mel, Tensor) else Tensor(mel)
    if mel.value.ndim != 2 or mel.shape[0] < 1 or mel.shape[1] != config.mel_channels:
        raise ShapeError(f"mel must be (J>=1, {config.mel_channels}), got {mel.shape}")
    rate = config.dropout
    h = ad.dropout(ad.relu(_linear(mel, params, "mel.pre")), rate, rng)
    for n in range(2):
        h = ad.dropout(ad.relu(_conv(h, params, f"mel.conv{n}", config.mel_dilation)), rate, rng)
    h = _linear(h, params, "mel.post")
    h = h + scaled_positional_embedding(mel.shape[0], config.model_dim, params["mel.pe_scale"])
    return _self_attention(h, params, "mel.attn", config.heads, rate, rng)
