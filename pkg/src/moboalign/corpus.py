"""Synthetic token/spectrum corpora with known durations, and JSON-lines I/O.

Each line of a corpus file is one utterance::

    {"id": "utt00000", "tokens": [3, 9, 1],
     "mel": {"J": 7, "C": 8, "values": [... J*C floats, row-major ...]},
     "durations": [2, 4, 1]}

``durations`` is optional and only present for synthetic data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class CorpusFormatError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    tokens: np.ndarray
    mel: np.ndarray
    durations: np.ndarray | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.mel = np.asarray(self.mel, dtype=np.float64)
        if self.durations is not None:
            self.durations = np.asarray(self.durations, dtype=np.int64)
            if len(self.durations) != len(self.tokens):
                raise ValueError(f"{self.id}: {len(self.durations)} durations for {len(self.tokens)} tokens")
            if self.durations.sum() != self.n_frames or np.any(self.durations < 1):
                raise ValueError(f"{self.id}: durations do not partition {self.n_frames} frames")

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        same_dur = (self.durations is None and other.durations is None) or (
            self.durations is not None and other.durations is not None
            and np.array_equal(self.durations, other.durations))
        return (self.id == other.id and np.array_equal(self.tokens, other.tokens)
                and self.mel.shape == other.mel.shape
                and self.mel.tobytes() == other.mel.tobytes() and same_dur)


@dataclass
class SynthSpec:
    vocab_size: int = 16
    mel_channels: int = 8
    d_min: int = 1
    d_max: int = 5
    i_min: int = 3
    i_max: int = 8
    sigma: float = 0.05
    samples: int = 200
    seed: int = 0
    max_cosine: float = 0.8
    allow_repeats: bool = False

    def validate(self) -> None:
        if not 1 <= self.d_min <= self.d_max:
            raise ValueError(f"need 1 <= d_min <= d_max, got d_min={self.d_min}, d_max={self.d_max}")
        if not 1 <= self.i_min <= self.i_max:
            raise ValueError(f"need 1 <= i_min <= i_max, got i_min={self.i_min}, i_max={self.i_max}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.vocab_size < 1 or self.mel_channels < 1 or self.samples < 0:
            raise ValueError("vocab_size and mel_channels must be positive, samples >= 0")
        if not self.allow_repeats and self.vocab_size < 2 and self.i_max > 1:
            raise ValueError("need vocab_size >= 2 to avoid adjacent repeated tokens")


def spectral_templates(spec: SynthSpec, rng: np.random.Generator, max_tries: int = 10000) -> np.ndarray:
    """One random vector per token id, pairwise cosine below ``spec.max_cosine``."""
    out: list[np.ndarray] = []
    for _ in range(max_tries):
        cand = rng.normal(size=spec.mel_channels)
        unit = cand / np.linalg.norm(cand)
        if all(abs(unit @ (t / np.linalg.norm(t))) < spec.max_cosine for t in out):
            out.append(cand)
            if len(out) == spec.vocab_size:
                return np.stack(out)
    raise RuntimeError(f"could not draw {spec.vocab_size} templates with cosine < {spec.max_cosine} "
                       f"in {spec.mel_channels} channels")


def generate(spec: SynthSpec) -> list[Utterance]:
    spec.validate()
    templates = spectral_templates(spec, np.random.default_rng([spec.seed, 0]))
    rng = np.random.default_rng([spec.seed, 1])
    corpus = []
    for n in range(spec.samples):
        n_tok = int(rng.integers(spec.i_min, spec.i_max + 1))
        tokens = []
        for _ in range(n_tok):
            while True:
                t = int(rng.integers(spec.vocab_size))
                if spec.allow_repeats or not tokens or t != tokens[-1]:
                    break
            tokens.append(t)
        durations = rng.integers(spec.d_min, spec.d_max + 1, size=n_tok)
        frames = np.repeat(templates[tokens], durations, axis=0)
        if spec.sigma > 0:
            frames = frames + spec.sigma * rng.normal(size=frames.shape)
        corpus.append(Utterance(f"utt{n:05d}", np.array(tokens), frames, durations))
    return corpus


def save(corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in corpus:
            rec = {"id": utt.id, "tokens": utt.tokens.tolist(),
                   "mel": {"J": utt.mel.shape[0], "C": utt.mel.shape[1],
                           "values": utt.mel.ravel().tolist()}}
            if utt.durations is not None:
                rec["durations"] = utt.durations.tolist()
            fh.write(json.dumps(rec) + "\n")


def _parse(line: str) -> Utterance:
    rec = json.loads(line)
    mel = rec["mel"]
    n_frames, n_chan = int(mel["J"]), int(mel["C"])
    values = np.array(mel["values"], dtype=np.float64)
    if values.size != n_frames * n_chan:
        raise ValueError(f"mel has {values.size} values, expected J*C = {n_frames * n_chan}")
    return Utterance(str(rec["id"]), rec["tokens"], values.reshape(n_frames, n_chan),
                     rec.get("durations"))


def load(path) -> list[Utterance]:
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                corpus.append(_parse(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: malformed utterance record: {exc}") from exc
    return corpus


def frame_stats(corpus) -> dict:
    lengths = [u.n_frames for u in corpus]
    if not lengths:
        return {"samples": 0, "frames": 0, "min_J": 0, "max_J": 0, "mean_J": 0.0}
    return {"samples": len(lengths), "frames": int(sum(lengths)), "min_J": min(lengths),
            "max_J": max(lengths), "mean_J": float(np.mean(lengths))}
