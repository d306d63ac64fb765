"""Aligner model: encoders, boundary attention, expansion and mel projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .align import AlignConfig, Alignment, GumbelDraw, attend
from .autodiff import ShapeError, Tensor
from .encoders import EncoderConfig, encode_mel, encode_text, init_encoder_params, _glorot
from .params import ParameterStore

EVAL_TAU = 0.1


def init_model(encoder: EncoderConfig, align: AlignConfig, seed: int = 0) -> ParameterStore:
    rng = np.random.default_rng([seed, 0xA11])
    store = ParameterStore()
    init_encoder_params(store, encoder, rng)
    d, c = encoder.model_dim, encoder.mel_channels
    store.add("out.w", _glorot(rng, d, c, (d, c)))
    store.add("out.b", np.zeros(c))
    store.meta = {"encoder": encoder.to_dict(),
                  "align": {"max_duration": align.max_duration, "interlace": align.interlace}}
    return store


def model_configs(store: ParameterStore) -> tuple[EncoderConfig, AlignConfig]:
    """Rebuild the configs recorded in a store's metadata (noise off)."""
    try:
        enc = EncoderConfig(**store.meta["encoder"])
        al = store.meta["align"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"checkpoint metadata lacks model configuration: {exc}") from exc
    return enc, AlignConfig(max_duration=int(al["max_duration"]), interlace=bool(al["interlace"]),
                            noise=False, tau_max=EVAL_TAU)


@dataclass
class Reconstruction:
    mel: Tensor
    alignment: Alignment
    text: Tensor
    keys: Tensor

    @property
    def beta(self) -> Tensor:
        return self.alignment.beta

    @property
    def alpha(self) -> np.ndarray:
        return self.alignment.alpha


def reconstruct(tokens, mel, params: dict[str, Tensor], encoder: EncoderConfig, align: AlignConfig,
                draw: GumbelDraw | None = None, tau: float = EVAL_TAU,
                rng: np.random.Generator | None = None) -> Reconstruction:
    """Predict the mel spectrum through the soft alignment.

    Training passes ``draw`` (noise plus per-token temperatures) and ``rng``
    (dropout); evaluation leaves both None and uses the fixed ``tau``.
    """
    text = encode_text(tokens, params, encoder, rng)
    keys = encode_mel(mel, params, encoder, rng)
    alignment = attend(text, keys, align, draw=draw, tau=tau)
    expanded = ad.matmul(ad.transpose(alignment.beta), text)
    pred = ad.matmul(expanded, params["out.w"]) + params["out.b"]
    return Reconstruction(pred, alignment, text, keys)


def mse_loss(pred, target) -> Tensor:
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = np.asarray(target.value if isinstance(target, Tensor) else target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return ad.mean(diff * diff)
