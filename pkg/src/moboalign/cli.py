"""Command-line entry point: ``moboalign <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.
Every subcommand ends with one machine-readable ``RESULT:`` line on stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .align import posteriors
from .config import ConfigError, build, load_pairs, reject_unknown
from .corpus import CorpusFormatError, SynthSpec
from .encoders import EncoderConfig
from .inference import compare_to_truth, extract_corpus_durations, soft_alignment
from .matrixio import write_csv, write_pgm
from .oracle import OracleSizeError, verify_random
from .params import CheckpointError, load_checkpoint
from .trainer import TrainConfig, TrainingDiverged, train

log = logging.getLogger("moboalign")


def _result(status: str, **fields) -> None:
    extra = " ".join(f"{k}={v}" for k, v in fields.items())
    print(f"RESULT: {status}" + (f" {extra}" if extra else ""))


def _load_corpus(path):
    try:
        return corpus_mod.load(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read corpus: {exc}") from exc


def _load_store(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read checkpoint: {exc}") from exc


# -- subcommands --------------------------------------------------------------


def cmd_gen_data(args) -> int:
    pairs = load_pairs(args.spec, args.set)
    reject_unknown(pairs, SynthSpec)
    spec = build(SynthSpec, pairs)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = corpus_mod.generate(spec)
    corpus_mod.save(data, args.out)
    stats = corpus_mod.frame_stats(data)
    print(f"wrote {stats['samples']} utterances, {stats['frames']} frames "
          f"(J min/mean/max {stats['min_J']}/{stats['mean_J']:.2f}/{stats['max_J']}) to {args.out}")
    _result("ok", **stats)
    return 0


def cmd_train(args) -> int:
    pairs = load_pairs(args.config, args.set)
    reject_unknown(pairs, TrainConfig, EncoderConfig)
    data = _load_corpus(args.corpus)
    if not data:
        raise ConfigError("corpus is empty")
    fixed = {"mel_channels": data[0].mel.shape[1]}
    if "vocab_size" not in pairs:
        fixed["vocab_size"] = int(max(u.tokens.max() for u in data)) + 1
    encoder = build(EncoderConfig, pairs, **fixed)
    config = build(TrainConfig, pairs)
    store = _load_store(args.resume) if args.resume else None

    def progress(step, total, loss):
        if step % args.log_every == 0 or step == total:
            log.info("step %d/%d loss %.6f", step, total, loss)

    try:
        state = train(data, config, encoder, out_dir=args.out_dir, store=store, progress=progress)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        _result("fail", step=exc.step, utterance=exc.utterance_id)
        return 1
    final = state.curve[-1][3] if state.curve else float("nan")
    first = state.curve[0][3] if state.curve else float("nan")
    print(f"trained {len(state.curve)} steps, loss {first:.6f} -> {final:.6f}")
    _result("ok", steps=state.step, first_loss=f"{first:.6g}", final_loss=f"{final:.6g}",
            checkpoint=Path(args.out_dir) / "final.bin")
    return 0


def cmd_align(args) -> int:
    store = _load_store(args.checkpoint)
    data = {u.id: u for u in _load_corpus(args.corpus)}
    if args.utterance not in data:
        print(f"error: utterance {args.utterance!r} not in corpus", file=sys.stderr)
        _result("fail", reason="missing-utterance")
        return 1
    utt = data[args.utterance]
    rec = soft_alignment(utt, store)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    beta = rec.beta.value
    write_csv(rec.alpha, out / "alpha.csv")
    write_csv(beta, out / "beta.csv")
    write_pgm(rec.alpha, out / "alpha.pgm")
    write_pgm(beta, out / "beta.pgm")
    write_csv(rec.mel.value, out / "recon_mel.csv")
    mse = float(np.mean((rec.mel.value - utt.mel) ** 2))
    print(f"{utt.id}: I={utt.n_tokens} J={utt.n_frames} reconstruction mse {mse:.6f}")
    _result("ok", utterance=utt.id, I=utt.n_tokens, J=utt.n_frames, mse=f"{mse:.6g}")
    return 0


def cmd_extract(args) -> int:
    store = _load_store(args.checkpoint)
    data = _load_corpus(args.corpus)
    report = extract_corpus_durations(data, store, out_path=args.out, jobs=args.jobs)
    print(report.summary_line())
    fields = {"rejected": f"{report.rejected}/{report.total}",
              "rate": f"{report.rejection_rate:.4f}"}
    if any(u.durations is not None for u in data):
        stats = compare_to_truth(report, data)
        print(f"match-rate: {stats.exact_rate:.4f} ({stats.exact}/{stats.tokens} tokens exact), "
              f"boundaries within 1 frame: {stats.boundary_rate:.4f}")
        fields["match_rate"] = f"{stats.exact_rate:.4f}"
        fields["boundary_rate"] = f"{stats.boundary_rate:.4f}"
    _result("ok", **fields)
    return 0


def cmd_verify_oracle(args) -> int:
    if args.trials < 0:
        raise ConfigError("trials must be >= 0")
    if args.trials == 0:
        print("warning: zero trials, nothing verified", file=sys.stderr)
        print("PASS (vacuous)")
        _result("pass", trials=0, max_diff=0.0)
        return 0
    def dp(e, d):
        a, b = posteriors(e, d)
        return a, b + args.inject_fault
    try:
        rep = verify_random(dp, args.trials, args.max_I, args.max_J, args.max_D, args.seed)
    except (OracleSizeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    ok = rep.passed(args.tol)
    verdict = "PASS" if ok else "FAIL"
    print(f"{verdict}, max diff {rep.max_diff:.3e} (alpha {rep.max_alpha_diff:.3e}, "
          f"beta {rep.max_beta_diff:.3e}) over {rep.trials} trials; tolerance {args.tol:g}")
    _result(verdict.lower(), trials=rep.trials, max_diff=f"{rep.max_diff:.3e}")
    return 0 if ok else 1


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moboalign", description="Monotonic boundary aligner")
    p.add_argument("--jobs", type=int, default=1, help="worker cap for per-utterance work")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--spec", help="key=value SynthSpec file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an aligner")
    t.add_argument("--corpus", required=True)
    t.add_argument("--config", help="key=value training/model config file")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--log-every", type=int, default=100)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("align", help="dump soft alignment matrices for one utterance")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--corpus", required=True)
    a.add_argument("--utterance", required=True)
    a.add_argument("--out-dir", required=True)
    a.set_defaults(func=cmd_align)

    x = sub.add_parser("extract", help="extract per-token durations")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--corpus", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_extract)

    v = sub.add_parser("verify-oracle", help="check the DP against brute-force enumeration")
    v.add_argument("--trials", type=int, default=200)
    v.add_argument("--max-I", type=int, default=4)
    v.add_argument("--max-J", type=int, default=8)
    v.add_argument("--max-D", type=int, default=4)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", type=float, default=1e-10)
    v.add_argument("--inject-fault", type=float, default=0.0, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        _result("error", reason="UsageError")
        return 2
    try:
        return args.func(args)
    except (ConfigError, CorpusFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _result("error", reason=type(exc).__name__)
        return 2
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _result("error", reason=type(exc).__name__)
        return 1


if __name__ == "__main__":
    sys.exit(main())
