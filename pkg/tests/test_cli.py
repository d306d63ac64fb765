import json

import pytest

from moboalign.cli import main
from moboalign.matrixio import read_csv, read_pgm


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def result_line(out):
    lines = [ln for ln in out.splitlines() if ln.startswith("RESULT:")]
    assert len(lines) == 1
    return lines[0]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus.jsonl"
    assert main(["gen-data", "--set", "samples=6", "--set", "seed=4", "--set", "i_max=4",
                 "--out", str(corpus)]) == 0
    conf = root / "train.conf"
    conf.write_text("# tiny run\nepochs = 2\nbatch_frames=40\nwarmup=5\nmax_duration=8\n"
                    "model_dim=8\nffn_hidden=8\nmel_cnn_channels=4\n")
    assert main(["train", "--corpus", str(corpus), "--config", str(conf),
                 "--out-dir", str(root / "run")]) == 0
    return root, corpus, root / "run" / "final.bin"


def test_gen_data_line_count(tmp_path, capsys):
    out_file = tmp_path / "c.jsonl"
    code, out, _ = run(capsys, "gen-data", "--set", "samples=10", "--out", str(out_file))
    assert code == 0 and result_line(out).startswith("RESULT: ok samples=10")
    assert len(out_file.read_text().splitlines()) == 10


def test_gen_data_from_spec_file_is_deterministic(tmp_path, capsys):
    spec = tmp_path / "spec.conf"
    spec.write_text("samples=5\nseed=11\n")
    run(capsys, "gen-data", "--spec", str(spec), "--out", str(tmp_path / "a.jsonl"))
    run(capsys, "gen-data", "--spec", str(spec), "--out", str(tmp_path / "b.jsonl"))
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_gen_data_invalid_range(tmp_path, capsys):
    code, out, err = run(capsys, "gen-data", "--set", "d_min=4", "--set", "d_max=2",
                         "--out", str(tmp_path / "c.jsonl"))
    assert code == 2 and "d_max" in err and result_line(out).startswith("RESULT: error")


def test_unknown_key_rejected(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--set", "sampels=3", "--out", str(tmp_path / "c.jsonl"))
    assert code == 2 and "sampels" in err


def test_bad_value_rejected(tmp_path, capsys):
    code, _, _ = run(capsys, "gen-data", "--set", "samples=many", "--out", str(tmp_path / "c.jsonl"))
    assert code == 2


def test_train_outputs(trained):
    root, _, ckpt = trained
    assert ckpt.exists()
    curve = (root / "run" / "loss_curve.csv").read_text().splitlines()
    assert curve[0] == "step,lr,tau_max,loss" and len(curve) > 1


def test_train_unknown_key(trained, tmp_path, capsys):
    _, corpus, _ = trained
    code, _, err = run(capsys, "train", "--corpus", str(corpus), "--set", "epoch=3",
                       "--out-dir", str(tmp_path))
    assert code == 2 and "epoch" in err


def test_align_outputs(trained, tmp_path, capsys):
    _, corpus, ckpt = trained
    first = json.loads(corpus.read_text().splitlines()[0])
    n_tok, n_frames, n_ch = len(first["tokens"]), first["mel"]["J"], first["mel"]["C"]
    code, out, _ = run(capsys, "align", "--checkpoint", str(ckpt), "--corpus", str(corpus),
                       "--utterance", first["id"], "--out-dir", str(tmp_path))
    assert code == 0 and "RESULT: ok" in out
    assert read_csv(tmp_path / "alpha.csv").shape == (n_tok, n_frames)
    assert read_csv(tmp_path / "beta.csv").shape == (n_tok, n_frames)
    assert read_csv(tmp_path / "recon_mel.csv").shape == (n_frames, n_ch)
    header = (tmp_path / "beta.pgm").read_bytes().split(b"\n")[:2]
    assert header == [b"P5", f"{n_frames} {n_tok}".encode()]
    assert read_pgm(tmp_path / "alpha.pgm").shape == (n_tok, n_frames)


def test_align_is_deterministic(trained, tmp_path, capsys):
    _, corpus, ckpt = trained
    uid = json.loads(corpus.read_text().splitlines()[1])["id"]
    for sub in ("a", "b"):
        run(capsys, "align", "--checkpoint", str(ckpt), "--corpus", str(corpus),
            "--utterance", uid, "--out-dir", str(tmp_path / sub))
    for name in ("alpha.csv", "beta.csv", "beta.pgm", "recon_mel.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_align_missing_utterance(trained, tmp_path, capsys):
    _, corpus, ckpt = trained
    code, out, _ = run(capsys, "align", "--checkpoint", str(ckpt), "--corpus", str(corpus),
                       "--utterance", "nope", "--out-dir", str(tmp_path))
    assert code == 1 and "RESULT: fail" in out


def test_extract_report(trained, tmp_path, capsys):
    _, corpus, ckpt = trained
    out_file = tmp_path / "d.jsonl"
    code, out, _ = run(capsys, "--jobs", "2", "extract", "--checkpoint", str(ckpt),
                       "--corpus", str(corpus), "--out", str(out_file))
    assert code == 0
    lines = out.splitlines()
    rejected = [ln for ln in lines if ln.startswith("rejected: ")]
    assert len(rejected) == 1 and rejected[0].endswith("/6")
    assert any(ln.startswith("match-rate: ") for ln in lines)
    for rec in map(json.loads, out_file.read_text().splitlines()):
        assert sum(rec["durations"]) == rec["J"]


def test_missing_checkpoint(trained, tmp_path, capsys):
    _, corpus, _ = trained
    code, _, _ = run(capsys, "extract", "--checkpoint", str(tmp_path / "none.bin"),
                     "--corpus", str(corpus), "--out", str(tmp_path / "d.jsonl"))
    assert code == 1


def test_corrupt_checkpoint(trained, tmp_path, capsys):
    _, corpus, _ = trained
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"MOBO\x01")
    code, _, _ = run(capsys, "extract", "--checkpoint", str(bad), "--corpus", str(corpus),
                     "--out", str(tmp_path / "d.jsonl"))
    assert code == 2


def test_verify_oracle_pass(capsys):
    code, out, _ = run(capsys, "verify-oracle", "--trials", "40")
    assert code == 0 and out.startswith("PASS, max diff")
    assert float(result_line(out).split("max_diff=")[1]) < 1e-10


def test_verify_oracle_detects_fault(capsys):
    code, out, _ = run(capsys, "verify-oracle", "--trials", "5", "--inject-fault", "1e-6")
    assert code == 1 and out.startswith("FAIL")


def test_verify_oracle_vacuous(capsys):
    code, out, err = run(capsys, "verify-oracle", "--trials", "0")
    assert code == 0 and "vacuous" in out and "warning" in err


def test_verify_oracle_guard(capsys):
    code, _, _ = run(capsys, "verify-oracle", "--trials", "3", "--max-J", "12")
    assert code == 2


def test_bad_jobs(capsys):
    code, _, _ = run(capsys, "--jobs", "0", "verify-oracle", "--trials", "0")
    assert code == 2
