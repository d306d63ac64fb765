"""Training loop: noisy alignment, MSE reconstruction, Adam with Noam decay."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .align import AlignConfig, AlignmentInputError, sample_gumbel
from .autodiff import Tape
from .encoders import EncoderConfig
from .model import init_model, mse_loss, reconstruct
from .params import ParameterStore, adam_step, collect_grads, save_checkpoint

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, tau_max: float, utterance_id: str):
        super().__init__(f"non-finite loss at step {step}, tau_max={tau_max:.4f}, "
                         f"utterance {utterance_id}")
        self.step = step
        self.tau_max = tau_max
        self.utterance_id = utterance_id


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_frames: int = 2000
    warmup: int = 4000
    lr_scale: float = 1.0
    tau_start: float = 1.0
    tau_end: float = 0.1
    max_duration: int = 20
    interlace: bool = False
    noise: bool = True
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_frames", "warmup", "max_duration"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr_scale <= 0:
            raise ValueError("lr_scale must be positive")
        if not 0.0 < self.tau_end <= self.tau_start <= 1.0:
            raise ValueError(f"temperature endpoints must satisfy 0 < end <= start <= 1, "
                             f"got {self.tau_start} -> {self.tau_end}")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")

    def align_config(self) -> AlignConfig:
        return AlignConfig(max_duration=self.max_duration, interlace=self.interlace,
                           noise=self.noise, tau_max=self.tau_start,
                           tau_final=self.tau_end)


def noam_lr(step: int, warmup: int, scale: float, model_dim: int) -> float:
    if step < 1:
        raise ValueError(f"noam step must be >= 1, got {step}")
    return scale * model_dim ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def tau_schedule(step: int, total: int, start: float = 1.0, end: float = 0.1) -> float:
    """Linear ceiling from ``start`` at step 0 to ``end`` at step ``total - 1``."""
    if total <= 1:
        return end
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return start * (1.0 - frac) + end * frac


def make_batches(lengths, budget: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle, then fill batches greedily until the next utterance would exceed ``budget``."""
    order = rng.permutation(len(lengths))
    batches, cur, frames = [], [], 0
    for idx in order:
        n = lengths[idx]
        if cur and frames + n > budget:
            batches.append(cur)
            cur, frames = [], 0
        cur.append(int(idx))
        frames += n
    if cur:
        batches.append(cur)
    return batches


def schedule(corpus, config: TrainConfig) -> list[list[int]]:
    """Every step's batch for the whole run; a pure function of the seed."""
    lengths = [u.n_frames for u in corpus]
    steps = []
    for epoch in range(config.epochs):
        steps.extend(make_batches(lengths, config.batch_frames,
                                  np.random.default_rng([config.seed, 2, epoch])))
    return steps


@dataclass
class TrainState:
    store: ParameterStore
    curve: list[tuple[int, float, float, float]] = field(default_factory=list)

    @property
    def step(self) -> int:
        return self.store.step


def sample_rng(seed: int, step: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 3, step, index])


def train_step(store: ParameterStore, corpus, batch, encoder: EncoderConfig, align: AlignConfig,
               tau_max: float, seed: int, step: int):
    """Forward/backward over one batch; returns (mean loss, averaged grads, samples used).

    The whole batch shares one tape and one backward pass over the mean of
    the per-sample losses, which is the per-sample gradient sum over the count.
    """
    tape = Tape()
    params = store.watch(tape)
    losses = []
    for idx in batch:
        utt = corpus[idx]
        if utt.n_tokens > utt.n_frames:
            logger.warning("skipping %s: %d tokens > %d frames", utt.id, utt.n_tokens, utt.n_frames)
            continue
        rng = sample_rng(seed, step, idx)
        n_cols = -(-utt.n_frames // 2) if align.interlace else utt.n_frames
        draw = sample_gumbel(utt.n_tokens, n_cols, tau_max, rng, align.tau_final) if align.noise else None
        try:
            rec = reconstruct(utt.tokens, utt.mel, params, encoder, align, draw=draw,
                              tau=tau_max, rng=rng)
        except AlignmentInputError as exc:
            logger.warning("skipping %s: %s", utt.id, exc)
            continue
        except FloatingPointError as exc:
            raise TrainingDiverged(step, tau_max, utt.id) from exc
        loss = mse_loss(rec.mel, utt.mel)
        if not math.isfinite(float(loss.value)):
            raise TrainingDiverged(step, tau_max, utt.id)
        losses.append(loss)
    used = len(losses)
    if not used:
        return float("nan"), {name: np.zeros_like(v) for name, v in store.values.items()}, 0
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    mean = total * (1.0 / used)
    grads = collect_grads(tape, params, tape.backward(mean))
    return float(np.mean([float(l.value) for l in losses])), grads, used


def train(corpus, config: TrainConfig, encoder: EncoderConfig, out_dir=None,
          store: ParameterStore | None = None, max_steps: int | None = None,
          progress: Callable[[int, int, float], None] | None = None) -> TrainState:
    """Train (or resume ``store``) over ``corpus``.

    The step schedule, Gumbel draws and dropout masks are all derived from
    ``config.seed`` and the step index, so resuming from a checkpoint taken
    at step ``s`` reproduces exactly what an uninterrupted run does after ``s``.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    align = config.align_config()
    if store is None:
        store = init_model(encoder, align, config.seed)
    store.meta["train"] = asdict(config)
    steps = schedule(corpus, config)
    total = len(steps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    state = TrainState(store)
    end = total if max_steps is None else min(total, store.step + max_steps)
    while store.step < end:
        s = store.step
        tau_max = tau_schedule(s, total, config.tau_start, config.tau_end)
        try:
            loss, grads, used = train_step(store, corpus, steps[s], encoder, align, tau_max,
                                           config.seed, s)
        except TrainingDiverged as exc:
            if out is not None:
                dump_diagnostic(exc, out / "diagnostic.json")
            raise
        lr = noam_lr(s + 1, config.warmup, config.lr_scale, encoder.model_dim)
        if used:
            adam_step(store, grads, lr)
        else:
            store.step += 1
        state.curve.append((store.step, lr, tau_max, loss))
        if progress is not None:
            progress(store.step, total, loss)
        if out is not None and config.checkpoint_every and store.step % config.checkpoint_every == 0:
            save_checkpoint(store, out / f"ckpt_{store.step:06d}.bin")
    if out is not None:
        save_checkpoint(store, out / "final.bin")
        write_curve(state.curve, out / "loss_curve.csv")
    return state


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lr", "tau_max", "loss"])
        for step, lr, tau, loss in curve:
            w.writerow([step, repr(lr), repr(tau), repr(loss)])


def dump_diagnostic(exc: TrainingDiverged, path) -> None:
    info = {"step": exc.step, "tau_max": exc.tau_max, "utterance_id": exc.utterance_id}
    Path(path).write_text(json.dumps(info) + "\n")
