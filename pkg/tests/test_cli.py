"""CLI surface: subcommands, config handling, exit codes, artifact layout."""

import os

import numpy as np
import pytest

from hemi.cli import RunConfig, main
from hemi.tensor import load_tensor, load_tsv


@pytest.fixture()
def synthetic_dir(tmp_path):
    out = tmp_path / "data"
    rc = main([
        "make-synthetic", "--out", str(out), "--seed", "5",
        "--blocks", "2", "--block-size", "15", "--intra", "0.4",
    ])
    assert rc == 0
    return out


def dataset_args(data_dir):
    return [
        "--nodes", str(data_dir / "nodes.tsv"),
        "--relations", str(data_dir / "relations.tsv"),
        "--edges", str(data_dir / "edges.tsv"),
        "--labels", str(data_dir / "labels.tsv"),
        "--target-type", "paper",
        "--metapaths", "pa.~pa,ps.~ps",
    ]


def fast_train_args():
    return ["--d", "16", "--d-m", "8", "--epochs", "15", "--patience", "50", "--quiet"]


class TestMakeSynthetic:
    def test_writes_expected_files(self, synthetic_dir):
        for name in ("nodes.tsv", "relations.tsv", "edges.tsv", "labels.tsv", "config.txt"):
            assert (synthetic_dir / name).exists()

    def test_same_seed_identical_files(self, tmp_path):
        args = ["make-synthetic", "--seed", "9", "--blocks", "2", "--block-size", "8"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        for name in ("nodes.tsv", "edges.tsv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestIngestCheck:
    def test_valid_dataset_ok(self, synthetic_dir, capsys):
        rc = main(["ingest-check"] + dataset_args(synthetic_dir))
        assert rc == 0
        out = capsys.readouterr().out
        assert "paper" in out and "pa.~pa" in out

    def test_missing_file_is_config_error(self, synthetic_dir):
        args = dataset_args(synthetic_dir)
        args[1] = str(synthetic_dir / "missing.tsv")
        assert main(["ingest-check"] + args) == 1

    def test_malformed_data_is_data_error(self, synthetic_dir):
        (synthetic_dir / "edges.tsv").write_text("p0\tnope\ta0\n", encoding="utf-8")
        assert main(["ingest-check"] + dataset_args(synthetic_dir)) == 2

    def test_bad_metapath_is_config_error(self, synthetic_dir):
        args = dataset_args(synthetic_dir)
        args[args.index("pa.~pa,ps.~ps")] = "pa.pa"
        assert main(["ingest-check"] + args) == 1


class TestTrainPipeline:
    def test_train_writes_artifacts(self, synthetic_dir, tmp_path):
        out = tmp_path / "run"
        rc = main(["train"] + dataset_args(synthetic_dir) + fast_train_args() + ["--out", str(out)])
        assert rc == 0
        for name in (
            "embeddings.tsv", "embeddings.bin", "report.tsv", "loss_curve.png",
            "attention.tsv", "attention.png", "checkpoint/manifest.txt",
        ):
            assert (out / name).exists(), name
        z = load_tensor(out / "embeddings.bin")
        assert z.shape == (30, 16)
        np.testing.assert_array_equal(load_tsv(out / "embeddings.tsv"), z)
        weights = [line.split("\t") for line in (out / "attention.tsv").read_text().strip().split("\n")]
        assert [w[0] for w in weights] == ["pa.~pa", "ps.~ps"]
        assert abs(sum(float(w[1]) for w in weights) - 1.0) < 1e-12

    def test_determinism_identical_embedding_files(self, synthetic_dir, tmp_path):
        base = ["train"] + dataset_args(synthetic_dir) + fast_train_args() + ["--seed", "3"]
        assert main(base + ["--out", str(tmp_path / "r1")]) == 0
        assert main(base + ["--out", str(tmp_path / "r2")]) == 0
        for name in ("embeddings.bin", "embeddings.tsv"):
            b1 = (tmp_path / "r1" / name).read_bytes()
            b2 = (tmp_path / "r2" / name).read_bytes()
            assert b1 == b2

    def test_seed_env_override_changes_result(self, synthetic_dir, tmp_path, monkeypatch):
        base = ["train"] + dataset_args(synthetic_dir) + fast_train_args()
        assert main(base + ["--out", str(tmp_path / "r1")]) == 0
        monkeypatch.setenv("HEMI_SEED", "99")
        assert main(base + ["--out", str(tmp_path / "r2")]) == 0
        b1 = (tmp_path / "r1" / "embeddings.bin").read_bytes()
        b2 = (tmp_path / "r2" / "embeddings.bin").read_bytes()
        assert b1 != b2

    def test_embed_from_checkpoint_reproduces_embeddings(self, synthetic_dir, tmp_path):
        run = tmp_path / "run"
        assert main(["train"] + dataset_args(synthetic_dir) + fast_train_args() + ["--out", str(run)]) == 0
        out2 = tmp_path / "embed"
        rc = main(
            ["embed"] + dataset_args(synthetic_dir)
            + ["--checkpoint", str(run / "checkpoint"), "--out", str(out2), "--quiet"]
        )
        assert rc == 0
        np.testing.assert_array_equal(
            load_tensor(run / "embeddings.bin"), load_tensor(out2 / "embeddings.bin")
        )

    def test_outputs_confined_to_out_dir(self, synthetic_dir, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = tmp_path / "only-here"
        rc = main(["train"] + dataset_args(synthetic_dir) + fast_train_args() + ["--out", str(out)])
        assert rc == 0
        assert os.listdir(workdir) == []


class TestEvalPipelines:
    @pytest.fixture()
    def trained(self, synthetic_dir, tmp_path):
        out = tmp_path / "run"
        args = ["train"] + dataset_args(synthetic_dir) + ["--d", "32", "--epochs", "120", "--quiet", "--out", str(out)]
        assert main(args) == 0
        return out

    def test_eval_cluster_writes_parseable_metrics(self, synthetic_dir, trained, tmp_path):
        out = tmp_path / "cluster"
        rc = main(
            ["eval-cluster"] + dataset_args(synthetic_dir)
            + ["--embeddings", str(trained / "embeddings.bin"), "--out", str(out), "--quiet"]
        )
        assert rc == 0
        rows = [line.split("\t") for line in (out / "metrics.tsv").read_text().strip().split("\n")]
        by_metric = {r[1]: float(r[3]) for r in rows}
        assert 0.0 <= by_metric["nmi"] <= 1.0
        assert (out / "metrics.png").exists()

    def test_mismatched_embeddings_rejected(self, synthetic_dir, trained, tmp_path):
        import hemi.tensor as T

        bad = tmp_path / "bad.bin"
        T.save_tensor(bad, np.zeros((7, 4)))
        rc = main(
            ["eval-cluster"] + dataset_args(synthetic_dir)
            + ["--embeddings", str(bad), "--out", str(tmp_path / "x"), "--quiet"]
        )
        assert rc == 2

    def test_eval_classify_runs(self, synthetic_dir, trained, tmp_path):
        out = tmp_path / "classify"
        rc = main(
            ["eval-classify"] + dataset_args(synthetic_dir)
            + ["--embeddings", str(trained / "embeddings.bin"), "--out", str(out), "--quiet"]
        )
        assert rc == 0
        content = (out / "metrics.tsv").read_text()
        assert "micro_f1" in content and "macro_f1" in content

    def test_eval_linkpred_runs(self, synthetic_dir, tmp_path):
        out = tmp_path / "lp"
        rc = main(
            ["eval-linkpred"] + dataset_args(synthetic_dir)
            + ["--d", "16", "--d-m", "8", "--epochs", "30", "--quiet", "--out", str(out)]
        )
        assert rc == 0
        rows = [line.split("\t") for line in (out / "metrics.tsv").read_text().strip().split("\n")]
        scopes = {r[2] for r in rows}
        assert "all" in scopes and "pa.~pa" in scopes

    def test_train_augmented_nc_runs(self, synthetic_dir, tmp_path):
        out = tmp_path / "aug"
        rc = main(
            ["train-augmented", "--task", "nc"] + dataset_args(synthetic_dir)
            + fast_train_args() + ["--out", str(out)]
        )
        assert rc == 0
        assert (out / "embeddings.bin").exists()

    def test_train_augmented_lp_runs(self, synthetic_dir, tmp_path):
        out = tmp_path / "auglp"
        rc = main(
            ["train-augmented", "--task", "lp"] + dataset_args(synthetic_dir)
            + fast_train_args() + ["--out", str(out)]
        )
        assert rc == 0
        assert (out / "metrics.tsv").exists()


class TestConfigFile:
    def test_config_file_parsed_and_flags_override(self, synthetic_dir, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(
            "\n".join([
                "# toy config",
                f"nodes = {synthetic_dir / 'nodes.tsv'}",
                f"relations = {synthetic_dir / 'relations.tsv'}",
                f"edges = {synthetic_dir / 'edges.tsv'}",
                f"labels = {synthetic_dir / 'labels.tsv'}",
                "target-type = paper",
                "metapaths = pa.~pa,ps.~ps",
                "d = 16",
                "d_m = 8",
                "epochs = 10",
                "lambda = 0.25",
                "seed = 4",
            ]) + "\n",
            encoding="utf-8",
        )
        out = tmp_path / "run"
        rc = main(["train", "--config", str(cfg_path), "--quiet", "--out", str(out), "--epochs", "5"])
        assert rc == 0
        lines = (out / "report.tsv").read_text().strip().split("\n")
        assert len(lines) == 6  # 5 epochs + summary: the flag overrode the file

    def test_unknown_key_rejected(self, tmp_path):
        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text("no_such_key = 1\n", encoding="utf-8")
        assert main(["train", "--config", str(cfg_path)]) == 1

    def test_usage_error_exit_code(self):
        assert main(["no-such-command"]) == 1
        assert main(["train", "--nodes"]) == 1

    def test_lambda_alias(self, tmp_path):
        cfg_path = tmp_path / "l.cfg"
        cfg_path.write_text("lambda = 0.75\n", encoding="utf-8")
        cfg = RunConfig.from_file(str(cfg_path))
        assert cfg.lam == 0.75

    def test_numeric_failure_exit_code(self, synthetic_dir, tmp_path):
        args = (
            ["train"] + dataset_args(synthetic_dir) + fast_train_args()
            + ["--lr", "1e200", "--grad-clip", "0", "--out", str(tmp_path / "boom")]
        )
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            assert main(args) == 3

    def test_linkpred_dimension_default(self, tmp_path):
        cfg_path = tmp_path / "d.cfg"
        cfg_path.write_text("d = 100\n", encoding="utf-8")
        cfg = RunConfig.from_file(str(cfg_path))
        assert cfg.hemi_config(linkpred=True).d == 100  # explicit key wins
        assert RunConfig().hemi_config(linkpred=True).d == 64
        assert RunConfig().hemi_config().d == 256
