import json
import subprocess
import sys

import numpy as np
import pytest

from relboltz.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NONFINITE, EXIT_OK, resolve_config, run_cli
from relboltz.data import Vocabulary, load_checkpoint, load_embeddings
from relboltz.model import init_params

TRIPLES = "cat\tis_a\tanimal\ndog\tis_a\tanimal\ncat\thas\tfur\ndog\thas\tfur\nfur\tpart_of\tanimal\n"


@pytest.fixture
def run_dir(tmp_path):
    (tmp_path / "kb.tsv").write_text(TRIPLES, encoding="utf-8")
    (tmp_path / "corpus.txt").write_text("The cat has fur.\nA dog is an animal with fur.\n", encoding="utf-8")
    (tmp_path / "valid.tsv").write_text("cat\tis_a\tanimal\ncat\thas\tfur\n", encoding="utf-8")
    (tmp_path / "test.tsv").write_text("dog\tis_a\tanimal\ndog\thas\tfur\n", encoding="utf-8")
    (tmp_path / "run.toml").write_text(
        f'train_files = ["{tmp_path / "kb.tsv"}"]\n'
        f'corpus_files = ["{tmp_path / "corpus.txt"}"]\n'
        "corpus_weight = 0.5\n"
        "dim = 4\nbatch_size = 4\nn_chains = 2\nepochs = 2\nseed = 7\nlearning_rate = 0.01\n"
        f'out_dir = "{tmp_path / "run"}"\n', encoding="utf-8")
    return tmp_path


def test_train_zero_epochs_checkpoint_is_init(run_dir):
    assert run_cli(["train", "--config", str(run_dir / "run.toml"), "--epochs", "0"]) == EXIT_OK
    out = run_dir / "run"
    ck = load_checkpoint(out / "latest.rblt")
    vocab = Vocabulary.load(out / "vocab.json")
    init = init_params(vocab.n_words, vocab.n_relations, 4, np.random.default_rng(7))
    assert ck.params.equals(init)
    assert ck.adam.t == 0
    assert (out / "train_log.jsonl").read_text() == ""
    assert json.loads((out / "manifest.json").read_text())["config"]["epochs"] == 0


def test_train_writes_run_directory(run_dir):
    args = ["train", "--config", str(run_dir / "run.toml"),
            "--valid-file", str(run_dir / "valid.tsv"), "--test-file", str(run_dir / "test.tsv")]
    assert run_cli(args) == EXIT_OK
    out = run_dir / "run"
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [
        "epoch_0000.rblt", "epoch_0001.rblt", "epoch_0002.rblt"]
    log = [json.loads(x) for x in (out / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2]
    recs = [json.loads(x) for x in (out / "report.jsonl").read_text().splitlines()]
    assert recs[-1]["relation"] == "ALL"
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 7 and "numpy" in man["versions"] and man["config"]["corpus_weight"] == 0.5
    vocab = Vocabulary.load(out / "vocab.json")
    assert "appears_in_sentence_with" in vocab.relations


def test_train_resumable_state_matches_fresh_run(run_dir):
    run_cli(["train", "--config", str(run_dir / "run.toml")])
    a = load_checkpoint(run_dir / "run" / "latest.rblt")
    run_cli(["train", "--config", str(run_dir / "run.toml"), "--out-dir", str(run_dir / "again")])
    b = load_checkpoint(run_dir / "again" / "latest.rblt")
    assert a.params.equals(b.params)
    np.testing.assert_array_equal(a.pool.states, b.pool.states)


def test_flag_overrides_file_and_is_recorded(run_dir):
    run_cli(["train", "--config", str(run_dir / "run.toml"), "--epochs", "0", "--learning-rate", "0.5",
             "--threads", "3"])
    cfg = json.loads((run_dir / "run" / "manifest.json").read_text())["config"]
    assert cfg["learning_rate"] == 0.5 and cfg["dim"] == 4 and cfg["threads"] == 3


def test_threads_env_default(run_dir, monkeypatch):
    monkeypatch.setenv("RELBOLTZ_THREADS", "5")
    assert resolve_config(str(run_dir / "run.toml"), {}).threads == 5
    assert resolve_config(str(run_dir / "run.toml"), {"threads": "2"}).threads == 2


@pytest.mark.parametrize("line,key", [("bogus_key = 1\n", "bogus_key"), ("dim = -3\n", "dim"),
                                      ('energy = "spline"\n', "energy"), ('epochs = "many"\n', "epochs")])
def test_bad_config_exits_two_naming_key(run_dir, capsys, line, key):
    bad = run_dir / "bad.toml"
    base = [x for x in (run_dir / "run.toml").read_text().splitlines(True) if not x.startswith(key + " ")]
    bad.write_text("".join(base) + line, encoding="utf-8")
    assert run_cli(["train", "--config", str(bad)]) == EXIT_CONFIG
    assert key in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
def test_non_finite_abort_exits_three(run_dir):
    code = run_cli(["train", "--config", str(run_dir / "run.toml"), "--energy", "dot",
                    "--learning-rate", "1e308"])
    assert code == EXIT_NONFINITE


def test_extract_cooc(run_dir):
    (run_dir / "c.txt").write_text("a b c d e f g\n\nb a\n", encoding="utf-8")
    out = run_dir / "cooc.tsv"
    assert run_cli(["extract-cooc", "--window", "5", "--in", str(run_dir / "c.txt"), "--out", str(out)]) == EXIT_OK
    pairs = [tuple(x.split("\t")) for x in out.read_text().splitlines()]
    assert len(pairs) == 2 * 20 + 2
    assert ("a", "appears_in_sentence_with", "g") not in pairs
    assert ("a", "appears_in_sentence_with", "f") in pairs


def test_extract_cooc_bad_window(run_dir):
    (run_dir / "c.txt").write_text("a b\n", encoding="utf-8")
    assert run_cli(["extract-cooc", "--window", "0", "--in", str(run_dir / "c.txt"),
                    "--out", str(run_dir / "o")]) == EXIT_CONFIG


def test_export_and_eval(run_dir):
    run_cli(["train", "--config", str(run_dir / "run.toml")])
    ckpt = str(run_dir / "run" / "latest.rblt")
    for which in ("source", "target"):
        out = run_dir / f"{which}.txt"
        assert run_cli(["export", "--checkpoint", ckpt, "--which", which, "--out", str(out)]) == EXIT_OK
        words, table = load_embeddings(out)
        want = load_checkpoint(ckpt).params.C if which == "source" else load_checkpoint(ckpt).params.V
        np.testing.assert_allclose(table, want, rtol=0, atol=1e-12)
    ev = run_dir / "ev"
    assert run_cli(["eval", "--checkpoint", ckpt, "--valid", str(run_dir / "valid.tsv"),
                    "--test", str(run_dir / "test.tsv"), "--known", str(run_dir / "kb.tsv"),
                    "--out", str(ev)]) == EXIT_OK
    first = (ev / "report.jsonl").read_text()
    run_cli(["eval", "--checkpoint", ckpt, "--valid", str(run_dir / "valid.tsv"),
             "--test", str(run_dir / "test.tsv"), "--known", str(run_dir / "kb.tsv"), "--out", str(ev)])
    assert (ev / "report.jsonl").read_text() == first
    assert json.loads((ev / "manifest.json").read_text())["command"] == "eval"


def test_eval_missing_checkpoint_fails(run_dir):
    assert run_cli(["eval", "--checkpoint", str(run_dir / "nope"), "--valid", "v", "--test", "t",
                    "--out", str(run_dir / "o")]) == EXIT_FAIL


def test_make_planted(run_dir):
    out = run_dir / "planted"
    assert run_cli(["make-planted", "--vocab", "12", "--relations", "2", "--dim", "3", "--triples", "300",
                    "--out", str(out)]) == EXIT_OK
    assert len((out / "train.tsv").read_text().splitlines()) == 300
    meta = json.loads((out / "meta.json").read_text())
    assert meta["n_words"] == 12 and meta["ground_truth_energy"] == "dot"
    assert load_checkpoint(out / "truth.rblt").params.n_words == 12


def test_oracle_check_command(capsys):
    code = run_cli(["oracle-check", "--vocab", "15", "--relations", "3", "--dim", "4", "--sweeps", "2000"])
    text = capsys.readouterr().out
    assert code == EXIT_OK
    assert float(text.strip().splitlines()[-1].split()[-1]) >= 0.95


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "relboltz", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("train", "eval", "extract-cooc", "export", "make-planted", "oracle-check"):
        assert sub in res.stdout
