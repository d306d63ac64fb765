"""Monotonic boundary attention.

Token ``i`` ends at frame ``B_i``; ``B_0 = 0``.  Given the previous boundary
``k`` the next one is drawn from the window ``k+1 .. min(k+D, J)`` with
probability proportional to the token-frame energy.  The forward recursion
yields the boundary posterior ``alpha[i, j] = P(B_i = j)`` and the alignment
posterior ``beta[i, j] = P(B_{i-1} < j <= B_i)``.

All matrices are stored 0-based: row ``i`` is token ``i+1`` and column ``j``
is frame ``j+1``.  Internally the DP works on an (I, J, D) table of window
probabilities indexed by (token, previous boundary k = 0..J-1, offset-1), which
is computed as a masked softmax over logits so that each window is
normalized on its own scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, _emit, embedding, matmul, mul, transpose

logger = logging.getLogger(__name__)

TAU_FINAL = 0.1


class AlignmentInputError(ValueError):
    """Raised for inputs with no valid monotone alignment (e.g. I > J)."""


@dataclass
class AlignConfig:
    max_duration: int = 20
    tau_max: float = 1.0
    tau_final: float = TAU_FINAL
    interlace: bool = False
    noise: bool = True

    def __post_init__(self):
        if self.max_duration < 1:
            raise ValueError(f"max_duration must be >= 1, got {self.max_duration}")
        if not 0.0 < self.tau_final <= self.tau_max <= 1.0:
            raise ValueError(f"need 0 < tau_final <= tau_max <= 1, got "
                             f"tau_final={self.tau_final}, tau_max={self.tau_max}")

    @property
    def dp_duration(self) -> int:
        """Window length used by the DP (halved, rounding up, when interlaced)."""
        return -(-self.max_duration // 2) if self.interlace else self.max_duration


@dataclass
class EnergyMatrix:
    """Token-frame energies kept as logits plus the per-row max shift."""

    logits: np.ndarray
    shift: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "EnergyMatrix":
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2:
            raise ShapeError(f"energy logits must be a matrix, got shape {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("energy logits contain NaN or Inf")
        return cls(logits, logits.max(axis=1))

    @classmethod
    def from_values(cls, energies) -> "EnergyMatrix":
        energies = np.asarray(energies, dtype=np.float64)
        if np.any(energies <= 0) or not np.all(np.isfinite(energies)):
            raise ValueError("energies must be strictly positive and finite")
        return cls.from_logits(np.log(energies))

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape

    @property
    def shifted(self) -> np.ndarray:
        """``exp(logit - row max)``; every row peaks at exactly 1."""
        return np.exp(self.logits - self.shift[:, None])

    @property
    def values(self) -> np.ndarray:
        """Unshifted energies ``exp(logit)``; may overflow for large logits."""
        return np.exp(self.logits)


def _as_energy(e) -> EnergyMatrix:
    return e if isinstance(e, EnergyMatrix) else EnergyMatrix.from_values(e)


@dataclass
class GumbelDraw:
    tau: np.ndarray
    noise: np.ndarray
    uniform: np.ndarray


def energy(text, mel) -> EnergyMatrix:
    """Scaled dot-product energies between text rows (queries) and mel rows (keys)."""
    q = np.asarray(text.value if isinstance(text, Tensor) else text, dtype=np.float64)
    k = np.asarray(mel.value if isinstance(mel, Tensor) else mel, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ShapeError(f"energy: query shape {q.shape} and key shape {k.shape} do not match")
    return EnergyMatrix.from_logits(q @ k.T / math.sqrt(q.shape[1]))


def gumbel_logits(logits: np.ndarray, draw: GumbelDraw) -> np.ndarray:
    tau = np.asarray(draw.tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise ValueError("temperatures must be positive")
    if draw.noise.shape != np.shape(logits) or tau.shape != (np.shape(logits)[0],):
        raise ShapeError(f"gumbel: draw shapes {tau.shape}/{draw.noise.shape} "
                         f"do not fit logits {np.shape(logits)}")
    return (np.asarray(logits) + draw.noise) / tau[:, None]


def gumbel_energy(logits, draw: GumbelDraw) -> EnergyMatrix:
    """Noisy, temperature-scaled energies ``exp((logit + G) / tau_i)``."""
    return EnergyMatrix.from_logits(gumbel_logits(logits, draw))


def sample_gumbel(n_tokens: int, n_frames: int, tau_max: float, rng: np.random.Generator,
                  tau_min: float = TAU_FINAL) -> GumbelDraw:
    if not tau_min <= tau_max <= 1.0:
        raise ValueError(f"tau_max must lie in [{tau_min}, 1], got {tau_max}")
    tau = rng.uniform(tau_min, tau_max, size=n_tokens)
    u = rng.random((n_tokens, n_frames))
    u = np.clip(u, np.finfo(np.float64).tiny, np.nextafter(1.0, 0.0))
    return GumbelDraw(tau=tau, noise=-np.log(-np.log(u)), uniform=u)


def conditional_boundary(e, i: int, k: int, max_duration: int) -> np.ndarray:
    """``P(B = k+1 .. min(k+D, J) | previous boundary k)`` for row ``i`` (0-based).

    ``k`` counts frames, so ``k = 0`` means the previous token ended before
    frame 1.
    """
    e = _as_energy(e)
    n_frames = e.shape[1]
    if not 0 <= k < n_frames:
        raise ValueError(f"empty window: previous boundary {k} leaves no frames of {n_frames}")
    window = e.logits[i, k:min(k + max_duration, n_frames)]
    p = np.exp(window - window.max())
    return p / p.sum()


# -- the DP ----------------------------------------------------------------


class _Windows:
    """Window probabilities and their tail sums for every (token, k, offset)."""

    def __init__(self, logits: np.ndarray, max_duration: int):
        n_tok, n_frames = logits.shape
        d = min(max_duration, n_frames)
        k = np.arange(n_frames)
        # frame number (1-based) reached from boundary k with offset o = 1..d
        frame = k[:, None] + np.arange(1, d + 1)[None, :]
        valid = frame <= n_frames
        self.index = np.where(valid, frame, 0)
        s = logits[:, np.where(valid, frame - 1, 0)]
        s = np.where(valid[None], s, -np.inf)
        s = s - s.max(axis=2, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=2, keepdims=True)
        self.prob = p
        self.tail = np.cumsum(p[:, :, ::-1], axis=2)[:, :, ::-1]
        self.shape = (n_tok, n_frames, d)


def _check_sizes(n_tok: int, n_frames: int) -> None:
    if n_tok < 1 or n_frames < 1:
        raise AlignmentInputError(f"need at least one token and one frame, got I={n_tok}, J={n_frames}")
    if n_tok > n_frames:
        raise AlignmentInputError(f"I={n_tok} tokens cannot cover J={n_frames} frames monotonically")


def _forward(win: _Windows):
    n_tok, n_frames, _ = win.shape
    flat = win.index.ravel()
    a = np.zeros((n_tok + 1, n_frames + 1))
    a[0, 0] = 1.0
    b = np.zeros((n_tok, n_frames + 1))
    for i in range(n_tok):
        prev = a[i, :n_frames, None]
        a[i + 1] = np.bincount(flat, (prev * win.prob[i]).ravel(), minlength=n_frames + 1)
        b[i] = np.bincount(flat, (prev * win.tail[i]).ravel(), minlength=n_frames + 1)
    a[1:, 0] = 0.0
    b[:, 0] = 0.0
    _report_underflow(a)
    return a, b


def _report_underflow(a: np.ndarray) -> None:
    tiny = np.finfo(np.float64).tiny
    sub = np.count_nonzero((a > 0) & (a < tiny))
    if sub:
        logger.warning("boundary posterior has %d subnormal entries", sub)
    dead = np.flatnonzero(a.sum(axis=1) == 0.0)
    if dead.size:
        logger.warning("boundary posterior mass vanished from token %d on", int(dead[0]))


def _backward(win: _Windows, a: np.ndarray, g_alpha: np.ndarray | None, g_beta: np.ndarray | None):
    """Gradient of ``sum(g_alpha*alpha) + sum(g_beta*beta)`` w.r.t. the logits."""
    n_tok, n_frames, d = win.shape
    ga = np.zeros((n_tok + 1, n_frames + 1))
    if g_alpha is not None:
        ga[1:, 1:] = g_alpha
    gb = np.zeros((n_tok, n_frames + 1))
    if g_beta is not None:
        gb[:, 1:] = g_beta
    d_prob = np.empty((n_tok, n_frames, d))
    idx = win.index
    for i in range(n_tok - 1, -1, -1):
        up_a = ga[i + 1][idx]
        up_b = gb[i][idx]
        prev = a[i, :n_frames, None]
        d_prob[i] = prev * up_a + np.cumsum(prev * up_b, axis=1)
        ga[i, :n_frames] += (win.prob[i] * up_a).sum(axis=1) + (win.tail[i] * up_b).sum(axis=1)
    p = win.prob
    d_s = p * (d_prob - (d_prob * p).sum(axis=2, keepdims=True))
    rows = (np.arange(n_tok)[:, None, None] * (n_frames + 1) + idx[None]).ravel()
    g = np.bincount(rows, d_s.ravel(), minlength=n_tok * (n_frames + 1))
    return g.reshape(n_tok, n_frames + 1)[:, 1:]


def posteriors(e, max_duration: int) -> tuple[np.ndarray, np.ndarray]:
    """Boundary and alignment posteriors ``(alpha, beta)``, each I x J."""
    e = _as_energy(e)
    _check_sizes(*e.shape)
    a, b = _forward(_Windows(e.logits, max_duration))
    return a[1:, 1:], b[:, 1:]


def boundary_forward(e, config: AlignConfig | int) -> np.ndarray:
    d = config if isinstance(config, int) else config.max_duration
    return posteriors(e, d)[0]


def alignment_posterior(e, alpha: np.ndarray, config: AlignConfig | int) -> np.ndarray:
    """Alignment posterior from energies and an already computed ``alpha``."""
    d = config if isinstance(config, int) else config.max_duration
    e = _as_energy(e)
    n_tok, n_frames = e.shape
    if np.shape(alpha) != (n_tok, n_frames):
        raise ShapeError(f"alpha shape {np.shape(alpha)} does not match energies {e.shape}")
    win = _Windows(e.logits, d)
    a = np.zeros((n_tok, n_frames))
    a[0, 0] = 1.0
    a[1:, 1:] = alpha[:-1, :-1]
    flat = win.index.ravel()
    beta = np.stack([np.bincount(flat, (a[i, :, None] * win.tail[i]).ravel(),
                                 minlength=n_frames + 1) for i in range(n_tok)])
    return beta[:, 1:]


def monotonic_alignment(scores, max_duration: int) -> Tensor:
    """Differentiable alignment posterior from a logit matrix.

    Returns ``beta`` as a tensor; ``beta.aux`` holds ``alpha`` (not tracked).
    """
    scores = scores if isinstance(scores, Tensor) else Tensor(scores)
    logits = scores.value
    if logits.ndim != 2:
        raise ShapeError(f"alignment scores must be a matrix, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("alignment scores contain NaN or Inf")
    _check_sizes(*logits.shape)
    win = _Windows(logits, max_duration)
    a, b = _forward(win)
    out = _emit("monotonic_alignment", b[:, 1:], (scores,),
                lambda g: (_backward(win, a, None, g),))
    out.aux = a[1:, 1:]
    return out


def expand_hidden(beta, text) -> Tensor:
    """Frame-level hidden states ``beta^T @ text`` (J x model-dim)."""
    beta = beta if isinstance(beta, Tensor) else Tensor(beta)
    text = text if isinstance(text, Tensor) else Tensor(text)
    if beta.shape[0] != text.shape[0]:
        raise ShapeError(f"expand: beta has {beta.shape[0]} rows, text hidden has {text.shape[0]}")
    return matmul(transpose(beta), text)


# -- frame interlacement ------------------------------------------------------


def interlace_indices(n_frames: int) -> np.ndarray:
    return np.arange(0, n_frames, 2)


def interlace_downsample(mel):
    """Keep the first frame of each consecutive pair (rows 0, 2, 4, ...)."""
    if isinstance(mel, Tensor):
        return embedding(mel, interlace_indices(mel.shape[0]))
    mel = np.asarray(mel)
    return mel[interlace_indices(mel.shape[0])]


def interlace_recover(alpha_sub, beta_sub, n_frames: int):
    """Map half-rate posteriors back to ``n_frames`` columns.

    Alpha column t lands on original column 2t (0-based), zeros between;
    beta column t is repeated onto columns 2t and 2t+1, truncated at n_frames.
    """
    n_sub = -(-n_frames // 2)
    a = np.asarray(alpha_sub)
    if a.shape[1] != n_sub or beta_sub.shape[1] != n_sub:
        raise ShapeError(f"interlace: expected {n_sub} sub-frames for J={n_frames}, "
                         f"got {a.shape[1]} and {beta_sub.shape[1]}")
    alpha = np.zeros((a.shape[0], n_frames))
    alpha[:, ::2] = a
    cols = np.arange(n_frames) // 2
    if isinstance(beta_sub, Tensor):
        beta = transpose(embedding(transpose(beta_sub), cols))
    else:
        beta = np.asarray(beta_sub)[:, cols]
    return alpha, beta


# -- full attention step ------------------------------------------------------


@dataclass
class Alignment:
    beta: Tensor
    alpha: np.ndarray
    logits: Tensor


def attend(text: Tensor, mel: Tensor, config: AlignConfig, draw: GumbelDraw | None = None,
           tau: float = 1.0) -> Alignment:
    """Energies, (optionally noisy) DP, and interlace recovery on the tape.

    With ``draw`` the per-token temperatures and noise come from it, otherwise
    all rows use the fixed temperature ``tau``.
    """
    n_frames = mel.shape[0]
    keys = interlace_downsample(mel) if config.interlace else mel
    logits = mul(matmul(text, transpose(keys)), 1.0 / math.sqrt(text.shape[1]))
    if draw is not None:
        scores = mul(logits + draw.noise, 1.0 / draw.tau[:, None])
    else:
        scores = mul(logits, 1.0 / tau)
    beta = monotonic_alignment(scores, config.dp_duration)
    alpha = beta.aux
    if config.interlace:
        alpha, beta = interlace_recover(alpha, beta, n_frames)
    return Alignment(beta=beta, alpha=alpha, logits=logits)
