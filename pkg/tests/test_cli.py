import csv

import numpy as np
import pytest
from PIL import Image

from hsiclass import io as hio
from hsiclass.cli import REJECT_INDEX, main
from hsiclass.fields import argmax_labeling
from hsiclass.mlr import load_model, predict_probs


SCENE = ["--height", "32", "--width", "32", "--classes", "3", "--bands", "6",
         "--noise-sigma", "0.45"]


def run_pipeline(root, seed=7, lambda_tv=None, max_iter="400"):
    out = str(root)
    assert main(["synth", "--out", out, "--seed", str(seed)] + SCENE) == 0
    assert main(["train", "--out", out, "--cube", f"{out}/cube.f32",
                 "--truth", f"{out}/truth.pgm", "--seed", str(seed),
                 "--samples-per-class", "10", "--validation-samples", "30"]) == 0
    classify = ["classify", "--out", out, "--cube", f"{out}/cube.f32",
                "--model", f"{out}/model.mlr", "--max-iter", max_iter]
    if lambda_tv is not None:
        classify += ["--lambda-tv", str(lambda_tv)]
    assert main(classify) == 0
    assert main(["sweep", "--out", out, "--field", f"{out}/field.f32",
                 "--labeling", f"{out}/labeling.pgm", "--truth", f"{out}/truth.pgm",
                 "--manifest", f"{out}/splits.csv"]) == 0
    assert main(["evaluate", "--out", out, "--field", f"{out}/field.f32",
                 "--labeling", f"{out}/labeling.pgm", "--truth", f"{out}/truth.pgm",
                 "--manifest", f"{out}/splits.csv", "--fraction", "0.1"]) == 0


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    run_pipeline(root)
    return root


class TestSynth:
    def test_default_files(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path)]) == 0
        cube = hio.load_cube(tmp_path / "cube.f32")
        assert (cube.bands, cube.height, cube.width) == (20, 64, 64)
        truth = hio.load_labels(tmp_path / "truth.pgm")
        assert truth.k == 4

    def test_seed_reproduces_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--seed", "11"] + SCENE) == 0
        assert (a / "cube.f32").read_bytes() == (b / "cube.f32").read_bytes()
        assert (a / "truth.pgm").read_bytes() == (b / "truth.pgm").read_bytes()

    def test_blocks_scene_has_exactly_k_labels(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--seed", "2",
                     "--classes", "4", "--region-kind", "blocks"]) == 0
        truth = hio.load_labels(tmp_path / "truth.pgm")
        assert set(np.unique(truth.labels)) == {1, 2, 3, 4}


class TestTrain:
    def test_seed_fixed_identical_model_file(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--seed", "4"] + SCENE) == 0
        models = []
        for name in ("m1", "m2"):
            out = tmp_path / name
            assert main(["train", "--out", str(out), "--cube",
                         f"{tmp_path}/cube.f32", "--truth", f"{tmp_path}/truth.pgm",
                         "--seed", "4", "--samples-per-class", "8",
                         "--validation-samples", "20"]) == 0
            models.append((out / "model.mlr").read_bytes())
        assert models[0] == models[1]

    def test_model_beats_chance_on_test(self, pipeline_dir):
        cube = hio.load_cube(pipeline_dir / "cube.f32")
        truth = hio.load_labels(pipeline_dir / "truth.pgm")
        splits = hio.load_manifest(pipeline_dir / "splits.csv")
        model = load_model(pipeline_dir / "model.mlr")
        probs = predict_probs(model, cube)
        predicted = np.argmax(probs.probs, axis=0) + 1
        accuracy = (predicted[splits.test] == truth.flat()[splits.test]).mean()
        assert accuracy > 1.0 / truth.k + 0.15

    def test_infeasible_split_exits_4(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--seed", "1"] + SCENE) == 0
        rc = main(["train", "--out", str(tmp_path), "--cube", f"{tmp_path}/cube.f32",
                   "--truth", f"{tmp_path}/truth.pgm", "--validation-samples",
                   "100000"])
        assert rc == 4


class TestClassify:
    def test_zero_prior_matches_pixelwise_argmax(self, tmp_path):
        run_pipeline(tmp_path, seed=9, lambda_tv=0.0)
        labeling = hio.load_labeling(tmp_path / "labeling.pgm")
        model = load_model(tmp_path / "model.mlr")
        cube = hio.load_cube(tmp_path / "cube.f32")
        probs = predict_probs(model, cube)
        pixelwise = np.argmax(probs.probs, axis=0) + 1
        top2 = np.sort(probs.probs, axis=0)
        clear = top2[-1] - top2[-2] > 1e-6
        np.testing.assert_array_equal(labeling.flat()[clear], pixelwise[clear])

    def test_context_removes_isolated_islands(self, tmp_path, pipeline_dir):
        def isolated_pixels(labels):
            count = 0
            h, w = labels.shape
            for r in range(h):
                for c in range(w):
                    neighbors = []
                    if r > 0:
                        neighbors.append(labels[r - 1, c])
                    if r < h - 1:
                        neighbors.append(labels[r + 1, c])
                    if c > 0:
                        neighbors.append(labels[r, c - 1])
                    if c < w - 1:
                        neighbors.append(labels[r, c + 1])
                    if all(nb != labels[r, c] for nb in neighbors):
                        count += 1
            return count

        run_pipeline(tmp_path, seed=7, lambda_tv=0.0)
        plain = isolated_pixels(hio.load_labeling(tmp_path / "labeling.pgm").labels)
        smoothed = isolated_pixels(
            hio.load_labeling(pipeline_dir / "labeling.pgm").labels)
        assert smoothed < plain

    def test_diagnostics_rows_match_iterations(self, pipeline_dir):
        with open(pipeline_dir / "diagnostics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        meta = dict(line.split(" = ") for line in
                    (pipeline_dir / "classify_meta.txt").read_text().strip().splitlines())
        assert len(rows) == int(meta["iterations"])

    def test_field_file_is_valid(self, pipeline_dir):
        field = hio.load_field(pipeline_dir / "field.f32")
        labeling = hio.load_labeling(pipeline_dir / "labeling.pgm")
        np.testing.assert_array_equal(argmax_labeling(field).labels, labeling.labels)


class TestSweep:
    def read_sweep(self, path):
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))

    def test_one_row_per_grid_point_and_flag(self, pipeline_dir):
        rows = self.read_sweep(pipeline_dir / "sweep.csv")
        assert len(rows) == 51  # default grid 0..0.50 step 0.01
        flags = [row["r_star_from_validation"] for row in rows]
        assert flags.count("1") == 1

    def test_rstar_from_test_maximizes_q_column(self, tmp_path, pipeline_dir):
        out = tmp_path / "sw"
        assert main(["sweep", "--out", str(out), "--field",
                     f"{pipeline_dir}/field.f32", "--labeling",
                     f"{pipeline_dir}/labeling.pgm", "--truth",
                     f"{pipeline_dir}/truth.pgm", "--manifest",
                     f"{pipeline_dir}/splits.csv", "--rstar-from", "test"]) == 0
        rows = self.read_sweep(out / "sweep.csv")
        qs = [float(row["Q"]) for row in rows]
        flagged = [i for i, row in enumerate(rows) if row["r_star_from_test"] == "1"]
        assert len(flagged) == 1
        assert qs[flagged[0]] == max(qs)

    def test_custom_grid(self, tmp_path, pipeline_dir):
        out = tmp_path / "sw"
        assert main(["sweep", "--out", str(out), "--field",
                     f"{pipeline_dir}/field.f32", "--labeling",
                     f"{pipeline_dir}/labeling.pgm", "--truth",
                     f"{pipeline_dir}/truth.pgm", "--manifest",
                     f"{pipeline_dir}/splits.csv", "--grid", "0,0.1,0.2"]) == 0
        assert len(self.read_sweep(out / "sweep.csv")) == 3


class TestEvaluate:
    def test_zero_fraction_matches_plain_accuracy(self, tmp_path, pipeline_dir):
        out = tmp_path / "ev"
        assert main(["evaluate", "--out", str(out), "--field",
                     f"{pipeline_dir}/field.f32", "--labeling",
                     f"{pipeline_dir}/labeling.pgm", "--truth",
                     f"{pipeline_dir}/truth.pgm", "--manifest",
                     f"{pipeline_dir}/splits.csv", "--fraction", "0"]) == 0
        with open(out / "report.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        overall = rows[-1]
        assert overall["class"] == "overall"
        assert float(overall["Q"]) == float(overall["OA"])
        assert float(overall["r"]) == 0.0

    def test_overlay_marks_exactly_floor_r_of_test(self, pipeline_dir):
        splits = hio.load_manifest(pipeline_dir / "splits.csv")
        overlay = np.asarray(Image.open(pipeline_dir / "overlay.png"))
        assert (overlay == REJECT_INDEX).sum() == int(0.1 * splits.test.size + 1e-9)

    def test_rejection_field_pgm_written(self, pipeline_dir):
        gray = hio.read_pgm(pipeline_dir / "rejection_field.pgm")
        truth = hio.load_labels(pipeline_dir / "truth.pgm")
        assert gray.shape == (truth.height, truth.width)
        assert gray.min() >= 0 and gray.max() <= 255

    def test_label_map_palette_indices_are_labels(self, pipeline_dir):
        indices = np.asarray(Image.open(pipeline_dir / "label_map.png"))
        labeling = hio.load_labeling(pipeline_dir / "labeling.pgm")
        np.testing.assert_array_equal(indices, labeling.labels)


class TestDeterminism:
    def test_rerun_is_byte_identical(self, tmp_path):
        runs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            run_pipeline(out, seed=13)
            runs.append(out)
        for name in ("splits.csv", "diagnostics.csv", "sweep.csv", "report.csv"):
            assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name
        for name in ("cube.f32", "model.mlr", "field.f32", "labeling.pgm",
                     "label_map.png", "overlay.png", "rejection_field.pgm"):
            assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name


class TestErrors:
    def test_missing_input_exits_3(self, tmp_path):
        rc = main(["classify", "--out", str(tmp_path), "--cube",
                   f"{tmp_path}/nope.f32", "--model", f"{tmp_path}/nope.mlr"])
        assert rc == 3

    def test_bad_config_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no_such_key = 1\n")
        rc = main(["synth", "--out", str(tmp_path), "--config", str(cfg)])
        assert rc == 2

    def test_bad_grid_exits_2(self, tmp_path, pipeline_dir):
        rc = main(["sweep", "--out", str(tmp_path), "--field",
                   f"{pipeline_dir}/field.f32", "--labeling",
                   f"{pipeline_dir}/labeling.pgm", "--truth",
                   f"{pipeline_dir}/truth.pgm", "--manifest",
                   f"{pipeline_dir}/splits.csv", "--grid", "0.5,0.1"])
        assert rc == 2

    def test_config_file_applies(self, tmp_path):
        cfg = tmp_path / "scene.cfg"
        cfg.write_text("# tiny scene\nsynth_height = 16\nsynth_width = 16\n"
                       "synth_k = 2\nsynth_bands = 3\nseed = 21\n")
        assert main(["synth", "--out", str(tmp_path), "--config", str(cfg)]) == 0
        cube = hio.load_cube(tmp_path / "cube.f32")
        assert (cube.bands, cube.height, cube.width) == (3, 16, 16)

    def test_flags_override_config(self, tmp_path):
        cfg = tmp_path / "scene.cfg"
        cfg.write_text("synth_height = 16\nsynth_width = 16\nsynth_bands = 3\n")
        assert main(["synth", "--out", str(tmp_path), "--config", str(cfg),
                     "--bands", "5"]) == 0
        assert hio.load_cube(tmp_path / "cube.f32").bands == 5
