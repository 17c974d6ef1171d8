"""End-to-end command line checks, run in-process via cli.main."""

import numpy as np
import pytest

import umfc
from umfc import cli
from umfc.clustering import assign_batch, batch_cluster_means
from umfc.core import l2_normalize_rows


def run(*argv) -> int:
    return cli.main(list(argv))


def _read_preds(path):
    rows = []
    for line in path.read_text().splitlines():
        pid, name, prob, cluster, flags = line.split("\t")
        rows.append((pid, name, float(prob), int(cluster), flags))
    return rows


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    """4 classes x 2 domains x 15 rows, dim 16, with domain anchors."""
    prefix = str(tmp_path_factory.mktemp("cli_small") / "s")
    assert run("synth", "--out-prefix", prefix, "--classes", "4", "--domains", "2",
               "--dim", "16", "--per-cell", "15", "--seed", "3", "--emit-domain-bank") == 0
    return prefix


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """The default 10x3x50 benchmark with domain anchors."""
    prefix = str(tmp_path_factory.mktemp("cli_bench") / "b")
    assert run("synth", "--out-prefix", prefix, "--emit-domain-bank") == 0
    return prefix


@pytest.fixture(scope="module")
def small_state(small, tmp_path_factory):
    path = str(tmp_path_factory.mktemp("cli_state") / "s.state")
    assert run("fit", "--train", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out-state", path, "--clusters", "2") == 0
    return path


# ---------------------------------------------------------------------------
# dispatch and help


def test_no_args_prints_command_list(capsys):
    assert run() == 0
    out = capsys.readouterr().out
    for cmd in cli._COMMANDS:
        assert cmd in out


def test_unknown_command():
    assert run("frobnicate") == 1


@pytest.mark.parametrize("cmd", sorted(cli._COMMANDS))
def test_subcommand_help_documents_defaults(cmd, capsys):
    with pytest.raises(SystemExit) as ex:
        run(cmd, "--help")
    assert ex.value.code == 0
    out = capsys.readouterr().out
    assert "default" in out
    assert "UMFC_" in out  # every tunable names its env override


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_expected_files(small, tmp_path):
    import pathlib

    for suffix in ("_images.bin", "_images.bin.labels", "_bank.bin", "_names.txt",
                   "_domains.bin", "_domain_names.txt"):
        assert pathlib.Path(small + suffix).exists(), suffix
    names = umfc.read_names(f"{small}_names.txt", expected=4)
    assert len(set(names)) == 4


def test_synth_byte_identical_reruns(small, tmp_path):
    import pathlib

    other = str(tmp_path / "t")
    assert run("synth", "--out-prefix", other, "--classes", "4", "--domains", "2",
               "--dim", "16", "--per-cell", "15", "--seed", "3", "--emit-domain-bank") == 0
    for suffix in ("_images.bin", "_images.bin.labels", "_bank.bin", "_names.txt", "_domains.bin"):
        assert pathlib.Path(other + suffix).read_bytes() == pathlib.Path(small + suffix).read_bytes()


def test_synth_dim_too_small(tmp_path):
    assert run("synth", "--out-prefix", str(tmp_path / "x"), "--classes", "10",
               "--domains", "3", "--dim", "4") == 1


# ---------------------------------------------------------------------------
# fit / predict


def test_fit_reports_cluster_sizes(small, tmp_path, capsys):
    out = str(tmp_path / "f.state")
    assert run("fit", "--train", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out-state", out, "--clusters", "2") == 0
    err = capsys.readouterr().err
    assert "-> 2 clusters" in err
    assert "cluster 0: size" in err and "cluster 1: size" in err


def test_fit_too_few_samples(small, tmp_path):
    # 120 rows cannot seed 200 clusters
    assert run("fit", "--train", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out-state", str(tmp_path / "x"),
               "--clusters", "200") == 2


def test_missing_input_file(tmp_path):
    assert run("fit", "--train", str(tmp_path / "nope.bin"), "--bank", str(tmp_path / "nope2.bin"),
               "--names", str(tmp_path / "nope3.txt"), "--out-state", str(tmp_path / "x")) == 2


def test_predict_matches_library_route(small, small_state, tmp_path):
    out = tmp_path / "preds.tsv"
    assert run("predict", "--state", small_state, "--test", f"{small}_images.bin",
               "--bank", f"{small}_bank.bin", "--names", f"{small}_names.txt",
               "--out", str(out)) == 0
    rows = _read_preds(out)
    assert len(rows) == 120

    test = umfc.read_embeddings(f"{small}_images.bin")
    bank = umfc.read_text_bank(f"{small}_bank.bin", f"{small}_names.txt")
    cfg = umfc.EngineConfig(clusters=2)
    state, model, cal_bank = umfc.fit_unsupervised(test, bank, cfg)
    for (pid, name, prob, cluster, flags), feature in zip(rows, test.data):
        p = umfc.apply_state(state, model, feature, cal_bank, cfg.tau)
        assert name == bank.names[p.label]
        assert np.isclose(prob, p.probs[p.label], rtol=0, atol=1e-9)


def test_predict_rejects_zero_tau(small, small_state, tmp_path):
    assert run("predict", "--state", small_state, "--test", f"{small}_images.bin",
               "--bank", f"{small}_bank.bin", "--names", f"{small}_names.txt",
               "--out", str(tmp_path / "p.tsv"), "--tau", "0") == 1


def test_predict_rejects_embedding_file_as_state(small, tmp_path):
    assert run("predict", "--state", f"{small}_images.bin", "--test", f"{small}_images.bin",
               "--bank", f"{small}_bank.bin", "--names", f"{small}_names.txt",
               "--out", str(tmp_path / "p.tsv")) == 2


def test_predict_empty_test_writes_empty_file(small, small_state, tmp_path):
    empty = tmp_path / "empty.bin"
    umfc.write_embeddings(umfc.EmbeddingMatrix(data=np.empty((0, 16))), empty)
    out = tmp_path / "p.tsv"
    assert run("predict", "--state", small_state, "--test", str(empty),
               "--bank", f"{small}_bank.bin", "--names", f"{small}_names.txt",
               "--out", str(out)) == 0
    assert out.read_bytes() == b""


# ---------------------------------------------------------------------------
# transduce


def test_transduce_report_matches_library_table(small, tmp_path):
    out, report = tmp_path / "p.tsv", tmp_path / "r.tsv"
    assert run("transduce", "--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(out), "--report", str(report),
               "--clusters", "2") == 0
    test = umfc.read_embeddings(f"{small}_images.bin")
    bank = umfc.read_text_bank(f"{small}_bank.bin", f"{small}_names.txt")
    preds, _ = umfc.transduce(test, bank, umfc.EngineConfig(clusters=2))
    table = umfc.per_domain_accuracy(preds, test.class_labels, test.domain_labels)
    assert report.read_text() == table.to_tsv()
    got = [r[1] for r in _read_preds(out)]
    assert got == [bank.names[p.label] for p in preds]


def test_transduce_report_needs_labels(small, tmp_path):
    bare = tmp_path / "bare.bin"
    data = umfc.read_embeddings(f"{small}_images.bin").data
    umfc.write_embeddings(umfc.EmbeddingMatrix(data=data), bare)
    assert run("transduce", "--test", str(bare), "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(tmp_path / "p.tsv"),
               "--report", str(tmp_path / "r.tsv")) == 2


def test_transduce_single_cluster_runs(small, tmp_path):
    report = tmp_path / "r.tsv"
    assert run("transduce", "--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(tmp_path / "p.tsv"),
               "--report", str(report), "--clusters", "1") == 0
    assert "overall_macro" in report.read_text()


def test_transduce_deterministic_output(small, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.tsv"
        assert run("transduce", "--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
                   "--names", f"{small}_names.txt", "--out", str(out), "--clusters", "2") == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# stream


def test_stream_one_big_batch_equals_transduce(small, tmp_path):
    t_out, s_out = tmp_path / "t.tsv", tmp_path / "s.tsv"
    base = ["--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
            "--names", f"{small}_names.txt", "--clusters", "2"]
    assert run("transduce", *base, "--out", str(t_out)) == 0
    assert run("stream", *base, "--out", str(s_out), "--batch-size", "120") == 0
    assert s_out.read_bytes() == t_out.read_bytes()


def test_stream_bs1_flags_first_seeds_uncalibrated(small, tmp_path):
    out = tmp_path / "s.tsv"
    assert run("stream", "--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(out),
               "--clusters", "3", "--batch-size", "1") == 0
    rows = _read_preds(out)
    assert len(rows) == 120
    for pid, name, prob, cluster, flags in rows[:3]:
        assert "uncalibrated" in flags
        assert cluster == -1
    for pid, name, prob, cluster, flags in rows[3:]:
        assert "uncalibrated" not in flags
        assert cluster >= 0


def test_stream_snapshots_and_ema_replacement(small, tmp_path):
    """With eta=1 each update replaces a present cluster's prototype with
    that batch's cluster mean; per-batch snapshots let us check it."""
    out_state = tmp_path / "s.state"
    assert run("stream", "--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(tmp_path / "p.tsv"),
               "--out-state", str(out_state), "--snapshot-every", "1",
               "--clusters", "2", "--batch-size", "40", "--mode", "ema", "--eta", "1.0") == 0
    snaps = [tmp_path / f"s.state.batch{n:05d}" for n in (1, 2, 3)]
    for s in snaps:
        assert s.exists()
    assert out_state.read_bytes() == snaps[-1].read_bytes()

    x_all = l2_normalize_rows(umfc.read_embeddings(f"{small}_images.bin").data)
    for n in (2, 3):
        prev, _ = umfc.restore_state(snaps[n - 2])
        cur, _ = umfc.restore_state(snaps[n - 1])
        xb = x_all[(n - 1) * 40 : n * 40]
        labels = assign_batch(prev.model, xb).labels
        means, counts = batch_cluster_means(xb, labels, 2)
        present = counts > 0
        assert np.array_equal(cur.calib.cluster_means[present], means[present])
        assert np.array_equal(
            cur.calib.cluster_means[~present], prev.calib.cluster_means[~present]
        )


def test_stream_snapshot_every_requires_out_state(small, tmp_path):
    assert run("stream", "--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(tmp_path / "p.tsv"),
               "--snapshot-every", "2") == 1


# ---------------------------------------------------------------------------
# diagnose


def _aggregate_from_probe_csv(path):
    last = path.read_text().splitlines()[-1].split(",")
    assert last[0] == "aggregate"
    return np.array([float(v) for v in last[1:]])


def test_diagnose_probe_kl_drops_after_calibration(bench, tmp_path):
    state = tmp_path / "b.state"
    assert run("fit", "--train", f"{bench}_images.bin", "--bank", f"{bench}_bank.bin",
               "--names", f"{bench}_names.txt", "--out-state", str(state), "--clusters", "3") == 0
    raw_csv, cal_csv = tmp_path / "raw.csv", tmp_path / "cal.csv"
    base = ["diagnose", "--which", "probe", "--bank", f"{bench}_bank.bin",
            "--names", f"{bench}_names.txt", "--domain-bank", f"{bench}_domains.bin"]
    assert run(*base, "--out", str(raw_csv)) == 0
    assert run(*base, "--out", str(cal_csv), "--state", str(state)) == 0
    kl_raw = umfc.kl_to_uniform(_aggregate_from_probe_csv(raw_csv))
    kl_cal = umfc.kl_to_uniform(_aggregate_from_probe_csv(cal_csv))
    assert kl_cal < kl_raw


def test_diagnose_direction_noiseless_matches_storage_precision(tmp_path, capsys):
    # noiseless directions are exact in memory; through files they are
    # exact up to the container's 32-bit storage
    prefix = str(tmp_path / "n")
    assert run("synth", "--out-prefix", prefix, "--classes", "4", "--domains", "2",
               "--dim", "16", "--per-cell", "10", "--noise", "0", "--emit-domain-bank") == 0
    out = tmp_path / "d.tsv"
    assert run("diagnose", "--which", "direction", "--test", f"{prefix}_images.bin",
               "--domain-bank", f"{prefix}_domains.bin", "--out", str(out)) == 0
    assert "min off-diagonal cosine" in capsys.readouterr().err
    cells = [float(line.split("\t")[2]) for line in out.read_text().splitlines()[1:]]
    assert len(cells) == 2  # ordered pairs of 2 domains
    assert min(cells) >= 1.0 - 1e-4


def test_diagnose_balance_shortfall_still_succeeds(small, tmp_path, capsys):
    out = tmp_path / "b.tsv"
    assert run("diagnose", "--which", "balance", "--test", f"{small}_images.bin",
               "--out", str(out), "--per-cell", "100") == 0
    err = capsys.readouterr().err
    assert "short cell" in err
    assert len(out.read_text().splitlines()) == 120  # every row selected


def test_diagnose_hist_counts_sum(small, small_state, tmp_path):
    out = tmp_path / "h.tsv"
    base = ["diagnose", "--which", "hist", "--test", f"{small}_images.bin",
            "--bank", f"{small}_bank.bin", "--names", f"{small}_names.txt"]
    assert run(*base, "--out", str(out)) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "class\tcount"
    assert sum(int(l.split("\t")[1]) for l in lines[1:]) == 120
    assert run(*base, "--out", str(out), "--state", small_state) == 0
    lines = out.read_text().splitlines()
    assert sum(int(l.split("\t")[1]) for l in lines[1:]) == 120


def test_diagnose_missing_required_flag(small, tmp_path):
    assert run("diagnose", "--which", "probe", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(tmp_path / "x.csv")) == 1


# ---------------------------------------------------------------------------
# sweep


def test_sweep_single_value_matches_single_run(bench, tmp_path):
    sweep_out, report = tmp_path / "s.tsv", tmp_path / "r.tsv"
    assert run("sweep", "--param", "clusters", "--values", "3",
               "--test", f"{bench}_images.bin", "--bank", f"{bench}_bank.bin",
               "--names", f"{bench}_names.txt", "--out", str(sweep_out)) == 0
    assert run("transduce", "--test", f"{bench}_images.bin", "--bank", f"{bench}_bank.bin",
               "--names", f"{bench}_names.txt", "--out", str(tmp_path / "p.tsv"),
               "--report", str(report), "--clusters", "3") == 0
    srow = sweep_out.read_text().splitlines()[1].split("\t")
    assert srow[:2] == ["clusters", "3"]
    rlines = [l.split("\t") for l in report.read_text().splitlines()]
    per_domain = [r[3] for r in rlines[1:-1]]
    overall = rlines[-1][3]
    assert srow[2] == overall
    assert srow[3:] == per_domain


def test_sweep_more_clusters_not_worse(bench, tmp_path):
    out = tmp_path / "s.tsv"
    assert run("sweep", "--param", "clusters", "--values", "1,3",
               "--test", f"{bench}_images.bin", "--bank", f"{bench}_bank.bin",
               "--names", f"{bench}_names.txt", "--out", str(out)) == 0
    rows = [l.split("\t") for l in out.read_text().splitlines()[1:]]
    acc = {r[1]: float(r[2]) for r in rows}
    assert acc["3"] >= acc["1"]


def test_sweep_unknown_param(bench, tmp_path):
    assert run("sweep", "--param", "tau", "--values", "1",
               "--test", f"{bench}_images.bin", "--bank", f"{bench}_bank.bin",
               "--names", f"{bench}_names.txt", "--out", str(tmp_path / "s.tsv")) == 1


def test_sweep_needs_labels(small, tmp_path):
    bare = tmp_path / "bare.bin"
    data = umfc.read_embeddings(f"{small}_images.bin").data
    umfc.write_embeddings(umfc.EmbeddingMatrix(data=data), bare)
    assert run("sweep", "--param", "clusters", "--values", "2",
               "--test", str(bare), "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out", str(tmp_path / "s.tsv")) == 2


# ---------------------------------------------------------------------------
# flag resolution


def test_env_supplies_default_flag_wins(small, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("UMFC_CLUSTERS", "2")
    assert run("fit", "--train", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out-state", str(tmp_path / "a.state")) == 0
    assert "-> 2 clusters" in capsys.readouterr().err
    assert run("fit", "--train", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out-state", str(tmp_path / "b.state"),
               "--clusters", "3") == 0
    assert "-> 3 clusters" in capsys.readouterr().err


def test_env_bad_value_is_usage_error(small, tmp_path, monkeypatch):
    monkeypatch.setenv("UMFC_CLUSTERS", "lots")
    assert run("fit", "--train", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
               "--names", f"{small}_names.txt", "--out-state", str(tmp_path / "x.state")) == 1


def test_bool_flag_values(small, tmp_path):
    base = ["transduce", "--test", f"{small}_images.bin", "--bank", f"{small}_bank.bin",
            "--names", f"{small}_names.txt", "--out", str(tmp_path / "p.tsv"), "--clusters", "2"]
    assert run(*base, "--normalize-input", "off") == 0
    assert run(*base, "--normalize-input", "maybe") == 1
