"""Hard boundary search, duration extraction and sample rejection."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .align import AlignConfig, EnergyMatrix, conditional_boundary, energy
from .encoders import encode_mel, encode_text
from .model import EVAL_TAU, model_configs, reconstruct
from .params import ParameterStore


class AlignmentFailure(RuntimeError):
    """The hard scan ran out of frames with tokens still to place."""


@dataclass
class HardBoundaries:
    """Frame boundaries ``b_1 .. b_I`` (1-based) and the scanned boundary rows.

    ``boundaries[-1]`` is always J: the last token takes the residual frames.
    """

    boundaries: np.ndarray
    alpha: np.ndarray


@dataclass
class DurationVector:
    durations: np.ndarray
    accepted: bool

    @property
    def total(self) -> int:
        return int(self.durations.sum())


def onehot(row) -> np.ndarray:
    """One-hot of the argmax; ties go to the lowest index."""
    row = np.asarray(row)
    out = np.zeros_like(row, dtype=np.float64)
    out[int(np.argmax(row))] = 1.0
    return out


def scan_logits(logits: np.ndarray, max_duration: int, tau: float = EVAL_TAU) -> HardBoundaries:
    """Greedy boundary scan over a token x frame logit matrix.

    Each token's boundary row is the window-normalized distribution given the
    previous token's hard boundary; its argmax becomes the next hard boundary.
    """
    e = EnergyMatrix.from_logits(np.asarray(logits, dtype=np.float64) / tau)
    n_tok, n_frames = e.shape
    alpha = np.zeros((n_tok, n_frames))
    b = np.zeros(n_tok, dtype=np.int64)
    k = 0
    for i in range(n_tok - 1):
        if k >= n_frames:
            raise AlignmentFailure(f"no frames left for token {i + 1} of {n_tok} (J={n_frames})")
        p = conditional_boundary(e, i, k, max_duration)
        alpha[i, k:k + len(p)] = p
        k = k + 1 + int(np.argmax(p))
        b[i] = k
    b[-1] = n_frames
    if n_tok > 0 and k < n_frames:
        hi = min(k + max_duration, n_frames)
        alpha[-1, k:hi] = conditional_boundary(e, n_tok - 1, k, max_duration)
    return HardBoundaries(b, alpha)


def hard_boundary_scan(text, mel, config: AlignConfig, tau: float = EVAL_TAU) -> HardBoundaries:
    """Hard scan from encoder outputs (no noise, fixed temperature)."""
    return scan_logits(energy(text, mel).logits, config.max_duration, tau)


def durations_from_boundaries(boundaries, n_frames: int, max_duration: int) -> DurationVector:
    """Per-token durations; the last token takes whatever frames remain.

    Only ``boundaries[:-1]`` are read.  The sample is rejected unless every
    duration, including the residual, lies in ``[1, max_duration]``.
    """
    b = np.asarray(boundaries, dtype=np.int64)
    head = b[:-1]
    if head.size and np.any(np.diff(np.concatenate([[0], head])) < 1):
        raise ValueError(f"boundaries must be strictly increasing, got {head.tolist()}")
    d = np.diff(np.concatenate([[0], head])) if head.size else np.zeros(0, dtype=np.int64)
    last = n_frames - int(d.sum())
    durations = np.concatenate([d, [last]]).astype(np.int64)
    accepted = bool(np.all(durations >= 1) and np.all(durations <= max_duration))
    return DurationVector(durations, accepted)


@dataclass
class UtteranceResult:
    id: str
    tokens: list[int]
    n_frames: int
    durations: list[int] | None
    boundaries: list[int] | None
    accepted: bool
    error: str | None = None

    def record(self) -> dict:
        return {"utterance_id": self.id, "token_ids": self.tokens, "durations": self.durations,
                "accepted": self.accepted, "J": self.n_frames}


@dataclass
class ExtractionReport:
    results: list[UtteranceResult] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def rejected(self) -> int:
        return sum(not r.accepted for r in self.results)

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.total if self.total else 0.0

    @property
    def accepted_records(self) -> list[dict]:
        return [r.record() for r in self.results if r.accepted]

    def summary_line(self) -> str:
        return f"rejected: {self.rejected}/{self.total}"


def extract_utterance(utt, store: ParameterStore) -> UtteranceResult:
    encoder, align = model_configs(store)
    params = store.constants()
    text = encode_text(utt.tokens, params, encoder)
    keys = encode_mel(utt.mel, params, encoder)
    base = UtteranceResult(utt.id, utt.tokens.tolist(), utt.n_frames, None, None, False)
    if utt.n_tokens > utt.n_frames:
        base.error = f"{utt.n_tokens} tokens > {utt.n_frames} frames"
        return base
    try:
        hard = hard_boundary_scan(text, keys, align)
    except AlignmentFailure as exc:
        base.error = str(exc)
        return base
    dv = durations_from_boundaries(hard.boundaries, utt.n_frames, align.max_duration)
    base.durations = dv.durations.tolist()
    base.boundaries = hard.boundaries.tolist()
    base.accepted = dv.accepted
    return base


def extract_corpus_durations(corpus, store: ParameterStore, out_path=None,
                             jobs: int = 1) -> ExtractionReport:
    """Hard-scan every utterance; write accepted records as JSON lines."""
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda u: extract_utterance(u, store), corpus))
    else:
        results = [extract_utterance(u, store) for u in corpus]
    report = ExtractionReport(results)
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            for rec in report.accepted_records:
                fh.write(json.dumps(rec) + "\n")
    return report


@dataclass
class MatchStats:
    tokens: int
    exact: int
    boundaries: int
    within_one: int

    @property
    def exact_rate(self) -> float:
        return self.exact / self.tokens if self.tokens else 0.0

    @property
    def boundary_rate(self) -> float:
        return self.within_one / self.boundaries if self.boundaries else 0.0


def compare_to_truth(report: ExtractionReport, corpus) -> MatchStats:
    """Score extracted durations against ground truth.

    Every token of every utterance counts; a failed scan counts as all wrong.
    Only the scanned boundaries ``b_1 .. b_{I-1}`` are scored, since ``b_I = J``
    holds by construction.
    """
    by_id = {u.id: u for u in corpus}
    stats = MatchStats(0, 0, 0, 0)
    for res in report.results:
        truth = by_id[res.id].durations
        if truth is None:
            continue
        stats.tokens += len(truth)
        stats.boundaries += len(truth) - 1
        if res.durations is None:
            continue
        stats.exact += int(np.sum(np.asarray(res.durations) == truth))
        true_b = np.cumsum(truth)[:-1]
        got_b = np.asarray(res.boundaries)[:-1]
        stats.within_one += int(np.sum(np.abs(got_b - true_b) <= 1))
    return stats


def soft_alignment(utt, store: ParameterStore, tau: float = EVAL_TAU):
    """Clean (noise-free) soft posteriors and reconstruction at temperature ``tau``."""
    encoder, align = model_configs(store)
    return reconstruct(utt.tokens, utt.mel, store.constants(), encoder, align, tau=tau)


def column_entropy(beta: np.ndarray) -> float:
    """Mean entropy (nats) of the per-frame token distributions in ``beta``.

    Columns are renormalized first since they may carry less than unit mass.
    """
    beta = np.asarray(beta)
    mass = beta.sum(axis=0)
    keep = mass > 0
    p = beta[:, keep] / mass[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return float(terms.sum(axis=0).mean()) if keep.any() else math.nan
