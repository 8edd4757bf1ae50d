import subprocess
import sys

import numpy as np
import pytest

from lankgc import cli
from lankgc.splits import read_bundle
from lankgc.util import read_kv, sha256_file


def run(argv, capsys=None):
    code = cli.main(argv)
    if capsys is None:
        return code
    captured = capsys.readouterr()
    return code, captured


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full pass: corpus -> bundle -> rules -> model -> reports."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    bundle = root / "bundle"
    rules = root / "rules.tsv"
    ckpt = root / "model"
    assert cli.main(["gen-synthetic", "--entities", "120", "--rule-strength", "0.9",
                     "--seed", "0", "--out", str(corpus)]) == 0
    assert cli.main(["build-dataset", "--corpus", str(corpus), "--strategy", "subject",
                     "--rate", "0.2", "--seed", "1", "--out", str(bundle)]) == 0
    assert cli.main(["mine-rules", "--train", str(corpus / "train.tsv"),
                     "--out", str(rules)]) == 0
    assert cli.main(["train", "--bundle", str(bundle), "--aggregator", "lan",
                     "--scorer", "distmult", "--seed", "0",
                     "--set", "epochs=2", "--set", "dim=8", "--set", "batch_size=128",
                     "--set", "learning_rate=0.01",
                     "--out", str(ckpt)]) == 0
    return root, corpus, bundle, rules, ckpt


def test_every_step_writes_run_meta(pipeline):
    root, corpus, bundle, rules, ckpt = pipeline
    for target in (corpus / "run.meta", bundle / "run.meta",
                   rules.parent / "rules.tsv.run.meta", ckpt / "run.meta"):
        assert target.exists(), target
        meta = read_kv(str(target))
        assert "command" in meta and "artifact_version" in meta


def test_gen_synthetic_meta_records_settings(pipeline):
    _, corpus, *_ = pipeline
    meta = read_kv(str(corpus / "run.meta"))
    assert meta["command"] == "gen-synthetic"
    assert meta["config.entities"] == "120"
    assert meta["config.rule_strength"] == "0.9"
    assert meta["config.seed"] == "0"


def test_build_dataset_meta_checksums_input(pipeline):
    _, corpus, bundle, *_ = pipeline
    meta = read_kv(str(bundle / "run.meta"))
    assert meta["input_sha256.corpus_train"] == sha256_file(str(corpus / "train.tsv"))
    assert meta["config.strategy"] == "subject"
    assert meta["config.rate"] == "0.2"


def test_train_meta_echoes_resolved_config(pipeline):
    *_, ckpt = pipeline
    meta = read_kv(str(ckpt / "run.meta"))
    assert meta["command"] == "train"
    assert meta["config.aggregator"] == "lan"
    assert meta["config.scorer"] == "distmult"
    assert meta["config.epochs"] == "2"
    assert meta["config.dim"] == "8"
    assert meta["config.learning_rate"] == "0.01"
    # defaults are echoed too, so the run is fully reconstructible
    assert meta["config.margin"] == "1.0"
    assert (ckpt / "rules.tsv").exists()
    assert (ckpt / "manifest").exists()


def test_eval_lp_writes_csv_and_is_idempotent(pipeline, capsys):
    root, _, bundle, _, ckpt = pipeline
    out = root / "metrics.csv"
    code, captured = run(["eval-lp", "--bundle", str(bundle), "--ckpt", str(ckpt),
                          "--seed", "0", "--out", str(out)], capsys)
    assert code == 0
    assert "MRR" in captured.out
    first = out.read_bytes()
    header, row = first.decode().strip().split("\n")
    assert header == "model,dataset,MR,MRR,hits1,hits3,hits10"
    assert row.startswith("lan+distmult,bundle,")
    assert cli.main(["eval-lp", "--bundle", str(bundle), "--ckpt", str(ckpt),
                     "--seed", "0", "--out", str(out)]) == 0
    assert out.read_bytes() == first
    assert (root / "metrics.csv.run.meta").exists()


def make_labeled(bundle_dir, path, rows):
    bundle = read_bundle(str(bundle_dir))
    swap = sorted({o for _, _, o in bundle.train})
    lines = []
    for i, (s, r, o) in enumerate(rows):
        lines.append(f"{s}\t{r}\t{o}\t1")
        lines.append(f"{s}\t{r}\t{swap[i % len(swap)]}\t0")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_eval_tc_reports_accuracy(pipeline, capsys):
    root, _, bundle, _, ckpt = pipeline
    b = read_bundle(str(bundle))
    valid_tsv = root / "tc_valid.tsv"
    test_tsv = root / "tc_test.tsv"
    make_labeled(bundle, valid_tsv, b.valid[:20])
    make_labeled(bundle, test_tsv, b.valid[20:40] or b.valid[:10])
    out = root / "tc.out"
    code, captured = run(["eval-tc", "--bundle", str(bundle), "--ckpt", str(ckpt),
                          "--valid", str(valid_tsv), "--test", str(test_tsv),
                          "--out", str(out)], capsys)
    assert code == 0
    assert "accuracy" in captured.out
    report = read_kv(str(out))
    acc = float(report["accuracy"])
    assert 0.0 <= acc <= 1.0
    assert any(k.startswith("threshold.") for k in report)
    # every value must round-trip as a plain number, no repr leakage
    for key, value in report.items():
        assert np.isfinite(float(value)), f"{key} = {value}"
    assert (root / "tc.out.run.meta").exists()


def test_inspect_weights_table(pipeline, capsys):
    root, _, bundle, _, ckpt = pipeline
    b = read_bundle(str(bundle))
    entity = b.train[0][0]
    query = b.train[0][1]
    out = root / "trace.tsv"
    assert cli.main(["inspect-weights", "--bundle", str(bundle), "--ckpt", str(ckpt),
                     "--entity", entity, "--query", query, "--out", str(out)]) == 0
    lines = out.read_text(encoding="utf-8").strip().split("\n")
    assert lines[0] == ("entity\tquery\tneighbor_relation\tneighbor_entity\t"
                        "alpha_logic\talpha_nn\talpha_total")
    totals = [float(line.split("\t")[6]) for line in lines[1:]]
    assert totals == sorted(totals, reverse=True)
    assert len(totals) >= 1
    assert (root / "trace.tsv.run.meta").exists()

    code, captured = run(["inspect-weights", "--bundle", str(bundle), "--ckpt", str(ckpt),
                          "--entity", entity, "--query", query], capsys)
    assert code == 0
    assert captured.out.splitlines()[0] == lines[0]


def test_train_is_bitwise_repeatable(pipeline, tmp_path):
    _, _, bundle, _, ckpt = pipeline
    again = tmp_path / "again"
    assert cli.main(["train", "--bundle", str(bundle), "--aggregator", "lan",
                     "--scorer", "distmult", "--seed", "0",
                     "--set", "epochs=2", "--set", "dim=8", "--set", "batch_size=128",
                     "--set", "learning_rate=0.01",
                     "--out", str(again)]) == 0
    assert (again / "entity_emb.f64").read_bytes() == (ckpt / "entity_emb.f64").read_bytes()
    assert (again / "manifest").read_bytes() == (ckpt / "manifest").read_bytes()


def test_flag_beats_set_beats_file(pipeline, tmp_path):
    _, _, bundle, *_ = pipeline
    cfg = tmp_path / "run.cfg"
    cfg.write_text("aggregator = mean\nepochs = 5\ndim = 6\nseed = 3\n", encoding="utf-8")
    out = tmp_path / "model"
    assert cli.main(["train", "--bundle", str(bundle), "--config", str(cfg),
                     "--aggregator", "query-attn", "--set", "epochs=1",
                     "--out", str(out)]) == 0
    meta = read_kv(str(out / "run.meta"))
    assert meta["config.aggregator"] == "query-attn"  # flag wins over file
    assert meta["config.epochs"] == "1"               # --set wins over file
    assert meta["config.dim"] == "6"                  # file wins over default
    assert meta["config.seed"] == "3"


def test_unknown_config_key_is_rejected(pipeline, tmp_path, capsys):
    _, _, bundle, *_ = pipeline
    code, captured = run(["train", "--bundle", str(bundle), "--set", "learningrate=0.1",
                          "--out", str(tmp_path / "x")], capsys)
    assert code == 1
    assert captured.err.startswith("error: unknown config key: learningrate")


def test_bad_config_value_is_rejected(pipeline, tmp_path, capsys):
    _, _, bundle, *_ = pipeline
    code, captured = run(["train", "--bundle", str(bundle), "--set", "margin=-2",
                          "--out", str(tmp_path / "x")], capsys)
    assert code == 1
    assert "margin" in captured.err


def test_malformed_set_pair(pipeline, tmp_path, capsys):
    _, _, bundle, *_ = pipeline
    code, captured = run(["train", "--bundle", str(bundle), "--set", "epochs",
                          "--out", str(tmp_path / "x")], capsys)
    assert code == 1
    assert "key=value" in captured.err


def test_missing_corpus_errors_cleanly(tmp_path, capsys):
    code, captured = run(["build-dataset", "--corpus", str(tmp_path / "nope"),
                          "--out", str(tmp_path / "b")], capsys)
    assert code == 1
    assert captured.err.startswith("error:")


def test_vocabulary_mismatch_is_refused(pipeline, tmp_path, capsys):
    root, corpus, _, _, ckpt = pipeline
    other_corpus = tmp_path / "other_corpus"
    assert cli.main(["gen-synthetic", "--entities", "80", "--rule-strength", "0.9",
                     "--seed", "4", "--out", str(other_corpus)]) == 0
    other = tmp_path / "other_bundle"
    assert cli.main(["build-dataset", "--corpus", str(other_corpus), "--strategy", "subject",
                     "--rate", "0.2", "--seed", "9", "--out", str(other)]) == 0
    code, captured = run(["eval-lp", "--bundle", str(other), "--ckpt", str(ckpt),
                          "--out", str(tmp_path / "m.csv")], capsys)
    assert code == 1
    assert "different vocabulary" in captured.err


def test_module_entry_point_runs(tmp_path):
    out = tmp_path / "c"
    proc = subprocess.run(
        [sys.executable, "-m", "lankgc.cli", "gen-synthetic", "--entities", "60",
         "--rule-strength", "0.8", "--seed", "2", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "train.tsv").exists()
    proc2 = subprocess.run(
        [sys.executable, "-m", "lankgc.cli", "mine-rules", "--train",
         str(out / "missing.tsv"), "--out", str(tmp_path / "r.tsv")],
        capture_output=True, text=True,
    )
    assert proc2.returncode == 1
    assert proc2.stderr.startswith("error:")
