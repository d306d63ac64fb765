import json

import numpy as np
import pytest

from moboalign.align import AlignConfig
from moboalign.corpus import SynthSpec, Utterance, generate
from moboalign.encoders import EncoderConfig
from moboalign.inference import (
    AlignmentFailure,
    ExtractionReport,
    UtteranceResult,
    column_entropy,
    compare_to_truth,
    durations_from_boundaries,
    extract_corpus_durations,
    onehot,
    scan_logits,
)
from moboalign.model import init_model


def test_onehot_argmax():
    np.testing.assert_array_equal(onehot([0.2, 0.5, 0.3]), [0, 1, 0])


def test_onehot_tie_goes_low():
    np.testing.assert_array_equal(onehot([0.4, 0.4, 0.2]), [1, 0, 0])


def test_single_token_single_frame():
    assert scan_logits(np.zeros((1, 1)), 3).boundaries.tolist() == [1]


def test_uniform_tie_break():
    # every window is uniform, so each token takes exactly one frame
    assert scan_logits(np.zeros((3, 6)), 4).boundaries.tolist() == [1, 2, 6]


def test_scan_follows_window_argmax():
    logits = np.full((3, 8), -5.0)
    logits[0, 2] = 3.0   # token 1 ends at frame 3
    logits[1, 5] = 3.0   # token 2 ends at frame 6
    hard = scan_logits(logits, 4)
    assert hard.boundaries.tolist() == [3, 6, 8]
    np.testing.assert_allclose(hard.alpha[0].sum(), 1.0)


def test_scan_ignores_peaks_outside_window():
    logits = np.zeros((2, 8))
    logits[0, 6] = 10.0
    assert scan_logits(logits, 3).boundaries[0] <= 3


def test_scan_strands_tokens():
    logits = np.full((3, 3), -9.0)
    logits[0, 2] = 9.0
    with pytest.raises(AlignmentFailure):
        scan_logits(logits, 3)


def test_durations_example():
    dv = durations_from_boundaries([3, 7, 10], 10, 20)
    assert dv.durations.tolist() == [3, 4, 3] and dv.accepted


def test_residual_is_used_not_last_boundary():
    dv = durations_from_boundaries([3, 7, 8], 10, 20)
    assert dv.durations.tolist() == [3, 4, 3]


def test_residual_too_long_rejected():
    dv = durations_from_boundaries([5, 30], 30, 20)
    assert dv.durations.tolist() == [5, 25] and not dv.accepted


def test_empty_residual_rejected():
    assert not durations_from_boundaries([4, 5], 4, 20).accepted


def test_boundaries_must_increase():
    with pytest.raises(ValueError):
        durations_from_boundaries([3, 3, 9], 9, 5)


def test_accepted_durations_sum_to_frames():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_tok = int(rng.integers(1, 6))
        n_frames = int(rng.integers(n_tok, 30))
        try:
            hard = scan_logits(rng.normal(scale=3, size=(n_tok, n_frames)), 6)
        except AlignmentFailure:
            continue
        dv = durations_from_boundaries(hard.boundaries, n_frames, 6)
        if dv.accepted:
            assert dv.total == n_frames
            assert dv.durations.min() >= 1 and dv.durations.max() <= 6


def _result(uid, ok):
    return UtteranceResult(uid, [1, 2], 4, [2, 2] if ok else [1, 9], [2, 4], ok)


def test_report_bookkeeping(tmp_path):
    rep = ExtractionReport([_result("a", True), _result("b", False), _result("c", True)])
    assert rep.rejected == 1 and rep.rejection_rate == pytest.approx(1 / 3)
    assert [r["utterance_id"] for r in rep.accepted_records] == ["a", "c"]
    assert rep.summary_line() == "rejected: 1/3"


def test_empty_corpus(tmp_path):
    store = init_model(EncoderConfig(vocab_size=4, model_dim=8, mel_channels=4), AlignConfig(max_duration=4))
    out = tmp_path / "d.jsonl"
    rep = extract_corpus_durations([], store, out)
    assert rep.rejection_rate == 0.0 and rep.summary_line() == "rejected: 0/0"
    assert out.read_text() == ""


def _toy_store():
    return init_model(EncoderConfig(vocab_size=16, model_dim=16, mel_channels=8, ffn_hidden=16),
                      AlignConfig(max_duration=8), seed=1)


def test_extraction_records_and_determinism(tmp_path):
    corpus = generate(SynthSpec(samples=6, seed=2))
    store = _toy_store()
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    rep = extract_corpus_durations(corpus, store, a)
    extract_corpus_durations(corpus, store, b, jobs=3)
    assert a.read_bytes() == b.read_bytes()
    for line in a.read_text().splitlines():
        rec = json.loads(line)
        assert set(rec) == {"utterance_id", "token_ids", "durations", "accepted", "J"}
        assert sum(rec["durations"]) == rec["J"] and rec["accepted"]
    assert len(a.read_text().splitlines()) == rep.total - rep.rejected


def test_too_many_tokens_is_rejected_not_raised():
    utt = Utterance("x", [1, 2, 3], np.zeros((2, 8)))
    rep = extract_corpus_durations([utt], _toy_store())
    assert rep.rejected == 1 and rep.results[0].error


def test_compare_to_truth_counts_failures_as_wrong():
    truth = Utterance("a", [1, 2, 3], np.zeros((6, 2)), [2, 3, 1])
    res = UtteranceResult("a", [1, 2, 3], 6, [2, 2, 2], [2, 4, 6], True)
    failed = UtteranceResult("b", [1, 2], 3, None, None, False)
    stats = compare_to_truth(ExtractionReport([res, failed]),
                             [truth, Utterance("b", [1, 2], np.zeros((3, 2)), [1, 2])])
    assert (stats.tokens, stats.exact) == (5, 1)
    assert (stats.boundaries, stats.within_one) == (3, 2)


def test_column_entropy():
    assert column_entropy(np.eye(3)) == 0.0
    assert column_entropy(np.full((2, 4), 0.25)) == pytest.approx(np.log(2))
