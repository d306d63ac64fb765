"""Exhaustive enumeration of monotone boundary sequences for tiny instances.

This is deliberately naive: it walks every boundary sequence, multiplies the
window-normalized energies along it, and sums path weights into marginals.
It shares no code with the DP in :mod:`moboalign.align`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_TOKENS = 6
MAX_FRAMES = 10
MAX_DURATION = 5


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryPath:
    """Boundaries ``(0, b_1, ..., b_n)``; ``complete`` when all tokens are placed."""

    boundaries: tuple[int, ...]
    weight: float
    complete: bool


@dataclass
class Enumeration:
    paths: list[BoundaryPath]
    n_tokens: int
    n_frames: int

    @property
    def complete(self) -> list[BoundaryPath]:
        return [p for p in self.paths if p.complete]

    @property
    def leaked(self) -> list[BoundaryPath]:
        return [p for p in self.paths if not p.complete]

    @property
    def leaked_mass(self) -> float:
        return sum(p.weight for p in self.leaked)


def enumerate_paths(e, max_duration: int) -> Enumeration:
    """All D-bounded boundary sequences with their probabilities.

    A prefix whose last boundary reaches frame J before every token is placed
    cannot be extended; it is kept as a leaked (incomplete) path.
    """
    e = np.asarray(e, dtype=np.float64)
    n_tok, n_frames = e.shape
    if n_tok > MAX_TOKENS or n_frames > MAX_FRAMES or max_duration > MAX_DURATION:
        raise OracleSizeError(
            f"oracle limited to I<={MAX_TOKENS}, J<={MAX_FRAMES}, D<={MAX_DURATION}; "
            f"got I={n_tok}, J={n_frames}, D={max_duration}")
    if np.any(e <= 0):
        raise ValueError("energies must be positive")
    paths: list[BoundaryPath] = []

    def walk(prefix: list[int], weight: float) -> None:
        token = len(prefix) - 1  # tokens placed so far
        k = prefix[-1]
        if token == n_tok:
            paths.append(BoundaryPath(tuple(prefix), weight, True))
            return
        if k == n_frames:
            paths.append(BoundaryPath(tuple(prefix), weight, False))
            return
        hi = min(k + max_duration, n_frames)
        z = sum(e[token, m - 1] for m in range(k + 1, hi + 1))
        for j in range(k + 1, hi + 1):
            walk(prefix + [j], weight * e[token, j - 1] / z)

    walk([0], 1.0)
    return Enumeration(paths, n_tok, n_frames)


def oracle_marginals(enum: Enumeration) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(alpha, beta)`` summed over complete and leaked paths."""
    alpha = np.zeros((enum.n_tokens, enum.n_frames))
    beta = np.zeros((enum.n_tokens, enum.n_frames))
    for path in enum.paths:
        b = path.boundaries
        for i in range(1, len(b)):
            alpha[i - 1, b[i] - 1] += path.weight
            beta[i - 1, b[i - 1]:b[i]] += path.weight
    return alpha, beta


def coverage(enum: Enumeration) -> np.ndarray:
    """Probability that frame j (1..J) lies at or before the last placed boundary.

    For complete paths that boundary is ``B_I``; leaked prefixes end at J and
    cover every frame.
    """
    cov = np.zeros(enum.n_frames)
    for path in enum.paths:
        cov[:path.boundaries[-1]] += path.weight
    return cov


@dataclass
class VerifyReport:
    trials: int
    max_alpha_diff: float
    max_beta_diff: float
    worst_case: tuple[int, int, int] | None

    @property
    def max_diff(self) -> float:
        return max(self.max_alpha_diff, self.max_beta_diff)

    def passed(self, tol: float = 1e-10) -> bool:
        return self.max_diff < tol


def _check_limits(max_tokens, max_frames, max_duration):
    if max_tokens > MAX_TOKENS or max_frames > MAX_FRAMES or max_duration > MAX_DURATION:
        raise OracleSizeError(
            f"oracle limited to I<={MAX_TOKENS}, J<={MAX_FRAMES}, D<={MAX_DURATION}")
    if min(max_tokens, max_frames, max_duration) < 1 or max_tokens > max_frames:
        raise ValueError("need 1 <= max_tokens <= max_frames and max_duration >= 1")


def _compare(dp, shapes, rng, log_scale) -> VerifyReport:
    worst_a = worst_b = 0.0
    worst_case = None
    trials = 0
    for n_tok, n_frames, d in shapes:
        e = np.exp(log_scale * rng.normal(size=(n_tok, n_frames)))
        alpha, beta = dp(e, d)
        ref_a, ref_b = oracle_marginals(enumerate_paths(e, d))
        da = float(np.max(np.abs(alpha - ref_a)))
        db = float(np.max(np.abs(beta - ref_b)))
        if max(da, db) >= max(worst_a, worst_b):
            worst_case = (n_tok, n_frames, d)
        worst_a, worst_b = max(worst_a, da), max(worst_b, db)
        trials += 1
    return VerifyReport(trials, worst_a, worst_b, worst_case)


def verify_random(dp, trials: int, max_tokens: int = 4, max_frames: int = 8, max_duration: int = 4,
                  seed: int = 0, log_scale: float = 2.0) -> VerifyReport:
    """Compare ``dp(energies, D) -> (alpha, beta)`` with enumeration on random instances.

    Shapes are drawn with I <= J; energies are ``exp(log_scale * N(0, 1))``.
    """
    _check_limits(max_tokens, max_frames, max_duration)
    rng = np.random.default_rng(seed)

    def shapes():
        for _ in range(trials):
            n_tok = int(rng.integers(1, max_tokens + 1))
            n_frames = int(rng.integers(n_tok, max_frames + 1))
            yield n_tok, n_frames, int(rng.integers(1, max_duration + 1))

    return _compare(dp, shapes(), rng, log_scale)


def verify_grid(dp, per_shape: int, max_tokens: int = 4, max_frames: int = 8,
                max_duration: int = 4, seed: int = 0, log_scale: float = 2.0) -> VerifyReport:
    """Like ``verify_random`` but over every (I, J, D) with I <= J, ``per_shape`` draws each."""
    _check_limits(max_tokens, max_frames, max_duration)
    shapes = [(i, j, d) for i in range(1, max_tokens + 1) for j in range(i, max_frames + 1)
              for d in range(1, max_duration + 1) for _ in range(per_shape)]
    return _compare(dp, shapes, np.random.default_rng(seed), log_scale)
