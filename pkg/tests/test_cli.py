import numpy as np
import pytest

from g2i.cli import build_config, main, make_parser, parse_config_file, stage_seed


def _small_args(out, seed=3):
    return ["--out", str(out), "--seed", str(seed),
            "--blocks", "12,12", "--k", "9", "--signal", "2.0",
            "--p-in", "0.8", "--p-out", "0.05",
            "--max-epochs", "4", "--n-permutations", "8", "--restarts", "5"]


def _data_args(out):
    return ["--edges", str(out / "edges.tsv"), "--features", str(out / "features.csv"),
            "--labels", str(out / "labels.csv")]


class TestConfig:
    def test_parse_config_file(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("# comment\nseed = 5\nout=/tmp/x\nmodality.rna=feat.csv\n")
        values = parse_config_file(path)
        assert values == {"seed": "5", "out": "/tmp/x", "modality.rna": "feat.csv"}

    def test_flags_override_file(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("seed=5\nepsilon=0.25\n")
        args = make_parser().parse_args(["run", "--config", str(path), "--seed", "9"])
        cfg = build_config(args)
        assert cfg.seed == 9
        assert cfg.epsilon == 0.25

    def test_bad_config_line(self, tmp_path):
        path = tmp_path / "cfg"
        path.write_text("just a line\n")
        args = make_parser().parse_args(["run", "--config", str(path)])
        from g2i.errors import G2IError

        with pytest.raises(G2IError):
            build_config(args)

    def test_stage_seed_stable_and_distinct(self):
        assert stage_seed(7, "cluster") == stage_seed(7, "cluster")
        names = ["synth", "split", "cluster", "layout", "train", "explain", "metrics"]
        seeds = {stage_seed(7, n) for n in names}
        assert len(seeds) == len(names)


class TestPipeline:
    def test_synth_writes_graph_files(self, tmp_path):
        assert main(["synth", *_small_args(tmp_path)]) == 0
        for name in ("edges.tsv", "features.csv", "labels.csv"):
            assert (tmp_path / name).exists()

    def test_full_run_produces_artifacts(self, tmp_path):
        assert main(["synth", *_small_args(tmp_path)]) == 0
        rc = main(["run", *_small_args(tmp_path), *_data_args(tmp_path)])
        assert rc == 0
        for name in ("images.g2t", "checkpoint.g2t", "report.csv", "eval.csv",
                     "importance.csv", "metrics.csv", "communities.csv",
                     "structural_layout.csv", "image0.csv"):
            assert (tmp_path / name).exists(), name

    def test_missing_feature_file_names_ingest(self, tmp_path, capsys):
        rc = main(["run", "--out", str(tmp_path), "--seed", "1",
                   "--edges", str(tmp_path / "nope.tsv"),
                   "--features", str(tmp_path / "nope.csv"),
                   "--labels", str(tmp_path / "nope2.csv")])
        assert rc == 1
        err = capsys.readouterr().err
        assert "error in stage ingest" in err

    def test_stagewise_equals_end_to_end(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            out.mkdir()
            assert main(["synth", *_small_args(out)]) == 0
        assert main(["run", *_small_args(a), *_data_args(a)]) == 0
        for stage in ("ingest", "cluster", "layout", "render", "train",
                      "eval", "explain", "metrics"):
            assert main([stage, *_small_args(b), *_data_args(b)]) == 0
        for name in ("images.g2t", "checkpoint.g2t", "report.csv", "eval.csv",
                     "importance.csv", "metrics.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_rerun_is_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            out.mkdir()
            assert main(["synth", *_small_args(out)]) == 0
            assert main(["run", *_small_args(out), *_data_args(out)]) == 0
        for name in ("edges.tsv", "images.g2t", "checkpoint.g2t", "report.csv",
                     "eval.csv", "importance.csv", "metrics.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
