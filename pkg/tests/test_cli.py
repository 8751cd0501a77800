import hashlib
import json

import numpy as np
import pytest

import wlclass
from wlclass.classifiers import load_model
from wlclass.cli import (
    derive_seed,
    main,
    read_feature_set,
    read_reduction_bundle,
    write_feature_set,
)
from wlclass.dataset_io import read_challenge_archive, write_challenge_archive
from wlclass.synth import generate_corpus, make_corpus_spec
from wlclass.windowing import WindowPolicy, build_challenge_dataset


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def run_chain(d, seed=7, threads=None):
    """synth -> window -> featurize -> train -> evaluate, small sizes."""
    extra = [] if threads is None else ["--threads", str(threads)]
    assert main(["synth", "--classes", "4", "--jobs-per-class", "6",
                 "--length-min", "60", "--length-max", "70", "--noise", "0.3",
                 "--seed", str(seed), "--out", str(d / "corpus.csv")] + extra) == 0
    assert main(["window", "--in", str(d / "corpus.csv"), "--policy", "middle",
                 "--length", "50", "--seed", str(seed),
                 "--out", str(d / "arc.npz")]) == 0
    assert main(["featurize", "--in", str(d / "arc.npz"), "--reduction", "cov",
                 "--out", str(d / "feat.npz"),
                 "--reduction-out", str(d / "red.npz")]) == 0
    assert main(["train", "--in", str(d / "feat.npz"), "--model", "rf",
                 "--n-trees", "15", "--seed", "1",
                 "--out", str(d / "model.wlc1")] + extra) == 0
    assert main(["evaluate", "--model-path", str(d / "model.wlc1"),
                 "--in", str(d / "feat.npz"), "--out", str(d / "report.jsonl")]) == 0


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "synth" in capsys.readouterr().out

    def test_no_arguments_is_usage(self):
        assert main([]) == 1

    def test_unknown_subcommand_is_usage(self):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag_is_usage(self, tmp_path):
        assert main(["evaluate", "--in", str(tmp_path / "x.npz"),
                     "--out", str(tmp_path / "r.jsonl")]) == 1

    def test_bad_choice_is_usage(self, tmp_path):
        assert main(["window", "--in", "x.csv", "--policy", "sideways",
                     "--out", str(tmp_path / "a.npz")]) == 1

    def test_synth_without_output_is_usage(self):
        assert main(["synth", "--classes", "4"]) == 1

    def test_missing_input_file_is_data_error(self, tmp_path):
        assert main(["window", "--in", str(tmp_path / "nope.csv"),
                     "--out", str(tmp_path / "a.npz")]) == 2

    def test_corrupt_archive_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"this is not a zip archive")
        assert main(["featurize", "--in", str(bad),
                     "--out", str(tmp_path / "f.npz")]) == 2

    def test_bad_threads_env_is_usage(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WLCLASS_THREADS", "lots")
        assert main(["synth", "--classes", "4", "--jobs-per-class", "3",
                     "--length-min", "20", "--length-max", "20",
                     "--out", str(tmp_path / "c.csv")]) == 1

    def test_threads_env_is_used_when_flag_absent(self, tmp_path, monkeypatch):
        monkeypatch.setenv("WLCLASS_THREADS", "2")
        assert main(["synth", "--classes", "4", "--jobs-per-class", "3",
                     "--length-min", "20", "--length-max", "20",
                     "--out", str(tmp_path / "c.csv")]) == 0

    def test_nonconverged_svm_exits_3_unless_allowed(self, tmp_path):
        rng = np.random.default_rng(0)
        features = rng.standard_normal((40, 6))
        labels = rng.integers(0, 2, size=40)
        feat = tmp_path / "feat.npz"
        write_feature_set(feat, features, labels, features[:8], labels[:8],
                          {"class_names": ["a", "b"], "reduction": "cov"})
        args = ["train", "--in", str(feat), "--model", "svm", "--c", "10",
                "--max-iter", "1", "--out", str(tmp_path / "m.wlc1")]
        assert main(args) == 3
        assert main(args + ["--allow-nonconverged"]) == 0


class TestConfigFile:
    def feature_set(self, tmp_path, seed=3):
        d = tmp_path
        assert main(["synth", "--classes", "4", "--jobs-per-class", "5",
                     "--length-min", "40", "--length-max", "45", "--seed", str(seed),
                     "--emit-archive", str(d / "arc.npz"), "--length", "30"]) == 0
        assert main(["featurize", "--in", str(d / "arc.npz"),
                     "--out", str(d / "feat.npz")]) == 0
        return d / "feat.npz"

    def test_config_supplies_defaults(self, tmp_path):
        feat = self.feature_set(tmp_path)
        cfg = tmp_path / "train.cfg"
        cfg.write_text("# small forest\nn-trees = 7\nseed = 5\n")
        out = tmp_path / "m.wlc1"
        assert main(["train", "--in", str(feat), "--model", "rf",
                     "--config", str(cfg), "--out", str(out)]) == 0
        _, provenance = load_model(out)
        assert provenance["params"]["n_trees"] == 7
        assert provenance["seed"] == 5

    def test_explicit_flag_beats_config(self, tmp_path):
        feat = self.feature_set(tmp_path)
        cfg = tmp_path / "train.cfg"
        cfg.write_text("n-trees = 7\n")
        out = tmp_path / "m.wlc1"
        assert main(["train", "--in", str(feat), "--model", "rf",
                     "--config", str(cfg), "--n-trees", "9",
                     "--out", str(out)]) == 0
        _, provenance = load_model(out)
        assert provenance["params"]["n_trees"] == 9

    def test_unknown_config_key_is_usage(self, tmp_path):
        feat = self.feature_set(tmp_path)
        cfg = tmp_path / "train.cfg"
        cfg.write_text("tree-count = 7\n")
        assert main(["train", "--in", str(feat), "--model", "rf",
                     "--config", str(cfg), "--out", str(tmp_path / "m.wlc1")]) == 1

    def test_malformed_config_line_is_usage(self, tmp_path):
        feat = self.feature_set(tmp_path)
        cfg = tmp_path / "train.cfg"
        cfg.write_text("just words\n")
        assert main(["train", "--in", str(feat), "--model", "rf",
                     "--config", str(cfg), "--out", str(tmp_path / "m.wlc1")]) == 1

    def test_boolean_config_toggles_store_true_flag(self, tmp_path):
        d = tmp_path
        assert main(["synth", "--classes", "4", "--jobs-per-class", "5",
                     "--length-min", "40", "--length-max", "45",
                     "--emit-archive", str(d / "arc.npz"), "--length", "30"]) == 0
        cfg = d / "feat.cfg"
        cfg.write_text("center-per-trial = true\n")
        assert main(["featurize", "--in", str(d / "arc.npz"), "--config", str(cfg),
                     "--out", str(d / "feat.npz")]) == 0
        *_, meta = read_feature_set(d / "feat.npz")
        assert meta["reduction"] == "cov,centered"


class TestPipelineArtifacts:
    def test_report_recounts_from_confusion(self, tmp_path):
        run_chain(tmp_path)
        records = read_jsonl(tmp_path / "report.jsonl")
        summary = records[0]
        assert summary["record"] == "summary"
        confusion = np.array(next(r for r in records if r["record"] == "confusion")["matrix"])
        assert summary["accuracy"] == pytest.approx(
            100.0 * np.trace(confusion) / confusion.sum()
        )
        class_records = [r for r in records if r["record"] == "class"]
        assert len(class_records) == 4
        assert confusion.sum(axis=1).tolist() == [r["support"] for r in class_records]

    def test_predict_csv_well_formed(self, tmp_path):
        run_chain(tmp_path)
        out = tmp_path / "pred.csv"
        assert main(["predict", "--model-path", str(tmp_path / "model.wlc1"),
                     "--in", str(tmp_path / "feat.npz"), "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "index,label,class_name"
        _, _, _, y_test, meta = read_feature_set(tmp_path / "feat.npz")
        assert len(lines) == 1 + len(y_test)
        for line in lines[1:]:
            index, label, name = line.split(",")
            assert meta["class_names"][int(label)] == name

    def test_pca_k_flag_controls_feature_width(self, tmp_path):
        run_chain(tmp_path)
        out = tmp_path / "pca.npz"
        assert main(["featurize", "--in", str(tmp_path / "arc.npz"),
                     "--reduction", "pca", "--k", "4", "--out", str(out)]) == 0
        features_train, _, features_test, _, meta = read_feature_set(out)
        assert features_train.shape[1] == 4
        assert features_test.shape[1] == 4
        assert meta["reduction"] == "pca-4"

    def test_reduction_bundle_reapplies_exactly(self, tmp_path):
        run_chain(tmp_path)
        reduction = read_reduction_bundle(tmp_path / "red.npz")
        dataset = read_challenge_archive(tmp_path / "arc.npz")
        _, _, features_test, _, _ = read_feature_set(tmp_path / "feat.npz")
        np.testing.assert_array_equal(reduction.transform(dataset.x_test), features_test)

    def test_emit_archive_shortcut(self, tmp_path):
        out = tmp_path / "arc.npz"
        assert main(["synth", "--classes", "4", "--jobs-per-class", "10",
                     "--length-min", "40", "--length-max", "45", "--length", "30",
                     "--split-ratio", "0.8", "--emit-archive", str(out)]) == 0
        dataset = read_challenge_archive(out)
        assert dataset.x_train.shape[1:] == (30, 7)
        assert dataset.x_train.shape[0] == 32
        assert dataset.x_test.shape[0] == 8

    def test_manifest_records_hashes_and_seeds(self, tmp_path):
        run_chain(tmp_path, seed=11)
        manifest = json.loads((tmp_path / "model.wlc1.manifest.json").read_text())
        assert manifest["subcommand"] == "train"
        assert manifest["version"] == wlclass.__version__
        feat = str(tmp_path / "feat.npz")
        assert manifest["input_hashes"][feat] == sha256(tmp_path / "feat.npz")
        assert manifest["seeds"]["master"] == 1
        assert manifest["flags"]["n_trees"] == 15
        assert manifest["wall_clock_s"] >= 0.0

    def test_derived_seeds_are_stable_and_distinct(self):
        assert derive_seed(7, "split") == derive_seed(7, "split")
        assert derive_seed(7, "split") != derive_seed(7, "window-offset")
        assert derive_seed(7, "split") != derive_seed(8, "split")


class TestDeterminism:
    def test_same_seed_byte_identical_artifacts(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir(), b.mkdir()
        run_chain(a, seed=7)
        run_chain(b, seed=7)
        for name in ("corpus.csv", "arc.npz", "feat.npz", "model.wlc1", "report.jsonl"):
            assert sha256(a / name) == sha256(b / name), name

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        a, b = tmp_path / "t1", tmp_path / "t4"
        a.mkdir(), b.mkdir()
        run_chain(a, seed=9, threads=1)
        run_chain(b, seed=9, threads=4)
        for name in ("corpus.csv", "arc.npz", "feat.npz", "model.wlc1", "report.jsonl"):
            assert sha256(a / name) == sha256(b / name), name


class TestGridsearchCli:
    def setup_archive(self, d):
        assert main(["synth", "--classes", "4", "--jobs-per-class", "8",
                     "--length-min", "60", "--length-max", "70", "--seed", "3",
                     "--emit-archive", str(d / "arc.npz"), "--length", "50"]) == 0
        return d / "arc.npz"

    def test_cell_records_recount(self, tmp_path):
        arc = self.setup_archive(tmp_path)
        out = tmp_path / "cv.jsonl"
        assert main(["gridsearch", "--in", str(arc), "--family", "rf",
                     "--n-trees", "3,9", "--reductions", "cov,pca-4",
                     "--folds", "3", "--out", str(out),
                     "--model-out", str(tmp_path / "best.wlc1")]) == 0
        records = read_jsonl(out)
        cells = [r for r in records if r["record"] == "cell"]
        (best,) = [r for r in records if r["record"] == "best"]
        assert len(cells) == 4
        for cell in cells:
            assert cell["mean_accuracy"] == pytest.approx(
                float(np.mean(cell["fold_accuracies"]))
            )
        means = [c["mean_accuracy"] for c in cells]
        assert best["index"] == int(np.argmax(means))
        model, provenance = load_model(tmp_path / "best.wlc1")
        assert provenance["cv_mean_accuracy"] == pytest.approx(max(means))

    def test_gridsearch_threads_byte_identical(self, tmp_path):
        arc = self.setup_archive(tmp_path)
        outs = []
        for threads, tag in ((1, "a"), (4, "b")):
            cv = tmp_path / f"cv_{tag}.jsonl"
            model = tmp_path / f"best_{tag}.wlc1"
            assert main(["gridsearch", "--in", str(arc), "--family", "rf",
                         "--n-trees", "5", "--reductions", "cov", "--folds", "3",
                         "--threads", str(threads), "--out", str(cv),
                         "--model-out", str(model)]) == 0
            outs.append((cv.read_bytes(), model.read_bytes()))
        assert outs[0] == outs[1]


class TestReproduceCli:
    def make_archive(self, path, seed):
        spec = make_corpus_spec(["a", "b", "c"], [6, 6, 6], seed=seed,
                                noise=0.3, length_range=(60, 70))
        dataset = build_challenge_dataset(
            generate_corpus(spec), WindowPolicy("middle", length=50),
            split_ratio=0.8, split_seed=0,
        )
        write_challenge_archive(dataset, path)

    def test_partial_table_and_delta_recount(self, tmp_path):
        self.make_archive(tmp_path / "m1.npz", seed=1)
        self.make_archive(tmp_path / "r1.npz", seed=2)
        manifest = tmp_path / "archives.json"
        manifest.write_text(json.dumps({
            "60-middle-1": str(tmp_path / "m1.npz"),
            "60-random-1": str(tmp_path / "r1.npz"),
        }))
        out = tmp_path / "table.jsonl"
        assert main(["reproduce", "--manifest", str(manifest), "--families", "rf",
                     "--rf-trees", "3", "--pca-ks", "4", "--folds", "2",
                     "--out", str(out)]) == 0
        records = read_jsonl(out)
        missing = [r["dataset"] for r in records if r["record"] == "missing"]
        assert sorted(missing) == sorted(
            ["60-start-1", "60-random-2", "60-random-3", "60-random-4", "60-random-5"]
        )
        cells = [r for r in records if r["record"] == "cell"]
        assert len(cells) == 4  # 2 variants x 2 datasets
        for cell in cells:
            assert 0.0 <= cell["accuracy"] <= 100.0
            if cell["reference"] is not None:
                assert cell["delta"] == pytest.approx(
                    cell["accuracy"] - cell["reference"]
                )

    def test_strict_mode_requires_all_archives(self, tmp_path):
        self.make_archive(tmp_path / "m1.npz", seed=1)
        manifest = tmp_path / "archives.json"
        manifest.write_text(json.dumps({"60-middle-1": str(tmp_path / "m1.npz")}))
        assert main(["reproduce", "--manifest", str(manifest), "--strict",
                     "--out", str(tmp_path / "t.jsonl")]) == 2

    def test_bad_manifest_is_data_error(self, tmp_path):
        manifest = tmp_path / "archives.json"
        manifest.write_text("[1, 2, 3]")
        assert main(["reproduce", "--manifest", str(manifest),
                     "--out", str(tmp_path / "t.jsonl")]) == 2
        manifest.write_text("{broken")
        assert main(["reproduce", "--manifest", str(manifest),
                     "--out", str(tmp_path / "t.jsonl")]) == 2
        assert main(["reproduce", "--manifest", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "t.jsonl")]) == 1
