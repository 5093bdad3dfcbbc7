"""CLI subcommands: full workflow, exit codes, JSON output, file artifacts."""

import json

import numpy as np
import pytest

from deepagg.cli import main
from deepagg.io import load_descriptors

pytestmark = pytest.mark.filterwarnings("ignore::deepagg.errors.RankDeficientWarning")


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert code == 0, err
    return json.loads(out)


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_synth")
    code = main(["gen-synthetic", "--out", str(root), "--variant", "bursty",
                 "--seed", "7"])
    assert code == 0
    return root


class TestWorkflow:
    def test_full_pipeline_reaches_perfect_map(self, synth, tmp_path, capsys):
        raw_db = tmp_path / "db_raw.dsc"
        raw_q = tmp_path / "q_raw.dsc"
        raw_w = tmp_path / "w_raw.dsc"
        for manifest, out in (("database.tsv", raw_db), ("queries.tsv", raw_q),
                              ("whitening.tsv", raw_w)):
            code, _, err = run(capsys, "aggregate", "--manifest", str(synth / manifest),
                               "--alpha", "0.1", "--eps", "1e-6",
                               "--spatial", "agauss", "--channel", "echan",
                               "--out", str(out))
            assert code == 0, err

        model = tmp_path / "model.whm"
        code, _, err = run(capsys, "whiten-train", "--descriptors", str(raw_w),
                           "--dim", "8", "--eps-w", "1e-2", "--out", str(model))
        assert code == 0, err

        white_db = tmp_path / "db.dsc"
        white_q = tmp_path / "q.dsc"
        for manifest, out in (("database.tsv", white_db), ("queries.tsv", white_q)):
            code, _, err = run(capsys, "aggregate", "--manifest", str(synth / manifest),
                               "--alpha", "0.1", "--spatial", "agauss",
                               "--channel", "echan", "--whitening", str(model),
                               "--out", str(out))
            assert code == 0, err
        assert load_descriptors(white_db)[0].dim == 8

        payload = run_json(capsys, "evaluate", "--index", str(white_db),
                           "--queries", str(white_q), "--gt", str(synth / "gt"),
                           "--ap-mode", "trapezoid")
        assert payload["map"] == pytest.approx(1.0, abs=1e-12)
        assert len(payload["queries"]) == 6

    def test_aggregate_reports_failures(self, synth, tmp_path, capsys):
        import deepagg.io as dio
        from deepagg.core import FeatureTensor

        zero = tmp_path / "zero.dft"
        dio.save_tensor(FeatureTensor(values=np.zeros((16, 5, 5), dtype=np.float32)),
                        zero)
        manifest = tmp_path / "m.tsv"
        first_id, first_path = dio.load_manifest(synth / "database.tsv").entries[0]
        manifest.write_text(f"{first_id}\t{first_path}\nzero\t{zero}\n")
        payload = run_json(capsys, "aggregate", "--manifest", str(manifest),
                           "--spatial", "none", "--channel", "none",
                           "--out", str(tmp_path / "out.dsc"))
        assert payload["written"] == 1
        assert payload["failures"][0]["image_id"] == "zero"

    def test_index_and_search(self, synth, tmp_path, capsys):
        db = tmp_path / "db.dsc"
        code, _, err = run(capsys, "aggregate", "--manifest",
                           str(synth / "database.tsv"), "--spatial", "none",
                           "--channel", "none", "--out", str(db))
        assert code == 0, err
        merged = tmp_path / "merged.dsc"
        payload = run_json(capsys, "index", "--descriptors", str(db),
                           "--out", str(merged))
        assert payload["entries"] == 30

        queries = tmp_path / "q.dsc"
        code, _, err = run(capsys, "aggregate", "--manifest",
                           str(synth / "queries.tsv"), "--spatial", "none",
                           "--channel", "none", "--out", str(queries))
        assert code == 0, err
        payload = run_json(capsys, "search", "--index", str(merged),
                           "--queries", str(queries), "--top", "3")
        assert len(payload["searches"]) == 6
        first = payload["searches"][0]["results"]
        assert len(first) == 3
        assert first[0]["score"] >= first[1]["score"] >= first[2]["score"]


class TestHarnessCommands:
    def test_sweep_alpha_table_and_plot(self, synth, tmp_path, capsys):
        table = tmp_path / "sweep.csv"
        plot = tmp_path / "sweep.png"
        payload = run_json(capsys, "sweep-alpha",
                           "--database", str(synth / "database.tsv"),
                           "--queries", str(synth / "queries.tsv"),
                           "--whitening", str(synth / "whitening.tsv"),
                           "--gt", str(synth / "gt"),
                           "--alphas", "0.1,1.0", "--dims", "8",
                           "--eps-w", "1e-2",
                           "--out", str(table), "--plot", str(plot))
        assert len(payload["rows"]) == 2
        lines = table.read_text().splitlines()
        assert lines[0] == "alpha,dim,map"
        assert len(lines) == 3
        assert plot.stat().st_size > 0

    def test_ablate_six_rows_and_byte_identical_json(self, synth, tmp_path, capsys):
        argv = ("ablate",
                "--database", str(synth / "database.tsv"),
                "--queries", str(synth / "queries.tsv"),
                "--whitening", str(synth / "whitening.tsv"),
                "--gt", str(synth / "gt"),
                "--alpha", "0.1", "--dims", "8", "--eps-w", "1e-2", "--json")
        code, out1, _ = run(capsys, *argv)
        assert code == 0
        code, out2, _ = run(capsys, *argv)
        assert code == 0
        assert out1 == out2
        rows = json.loads(out1)["rows"]
        assert len(rows) == 6

    def test_ablate_full_grid(self, synth, tmp_path, capsys):
        payload = run_json(capsys, "ablate",
                           "--database", str(synth / "database.tsv"),
                           "--queries", str(synth / "queries.tsv"),
                           "--whitening", str(synth / "whitening.tsv"),
                           "--gt", str(synth / "gt"),
                           "--dims", "8", "--eps-w", "1e-2", "--full")
        assert len(payload["rows"]) == 9


class TestVizCommands:
    def test_heatmap_ppm_and_png(self, synth, tmp_path, capsys):
        tensor_path = next((synth / "tensors").glob("class0_*.dft"))
        out = tmp_path / "fig.ppm"
        png = tmp_path / "fig.png"
        payload = run_json(capsys, "viz", "heatmap", "--tensor", str(tensor_path),
                           "--alpha", "0.1", "--out", str(out), "--png", str(png))
        assert out.read_bytes().startswith(b"P6\n")
        assert png.stat().st_size > 0
        assert 1.0 <= payload["center_i"] <= 5.0

    def test_vectors_then_corr(self, synth, tmp_path, capsys):
        vec_dir = tmp_path / "vectors"
        run_json(capsys, "viz", "vectors", "--manifest", str(synth / "queries.tsv"),
                 "--kind", "element", "--out", str(vec_dir))
        assert len(list(vec_dir.glob("*.csv"))) == 6
        corr = tmp_path / "corr.csv"
        payload = run_json(capsys, "viz", "corr", "--vectors", str(vec_dir),
                           "--metric", "pearson", "--out", str(corr))
        assert payload["n"] == 6
        assert corr.read_text().startswith("id,")

    def test_corr_needs_two_vectors(self, tmp_path, capsys):
        vec_dir = tmp_path / "one"
        vec_dir.mkdir()
        (vec_dir / "a.csv").write_text("1.0\n2.0\n")
        code, _, err = run(capsys, "viz", "corr", "--vectors", str(vec_dir),
                           "--out", str(tmp_path / "c.csv"))
        assert code == 3


class TestExitCodes:
    def test_missing_manifest_is_data_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "aggregate", "--manifest",
                           str(tmp_path / "absent.tsv"), "--out",
                           str(tmp_path / "o.dsc"))
        assert code == 3
        assert "error:" in err

    def test_invalid_alpha_is_validation_error(self, synth, tmp_path, capsys):
        code, _, err = run(capsys, "aggregate", "--manifest",
                           str(synth / "database.tsv"), "--alpha", "0",
                           "--out", str(tmp_path / "o.dsc"))
        assert code == 2

    def test_unknown_choice_exits_two(self, synth, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["aggregate", "--manifest", str(synth / "database.tsv"),
                  "--spatial", "hexagonal", "--out", str(tmp_path / "o.dsc")])
        assert excinfo.value.code == 2

    def test_gen_synthetic_bad_variant_exits_two(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["gen-synthetic", "--out", str(tmp_path), "--variant", "weird"])
        assert excinfo.value.code == 2

    def test_success_is_zero(self, tmp_path, capsys):
        code, _, _ = run(capsys, "gen-synthetic", "--out", str(tmp_path / "d"),
                         "--variant", "separable", "--images-per-class", "4")
        assert code == 0
