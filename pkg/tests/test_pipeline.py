#!/usr/bin/env python3
"""Pipeline tests: word extraction, summaries, reports and the command line."""

import csv
import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from classify.bundle import load_bundle
from classify.scoring import ScoreVector
from convnet.network import initial_weights
from core.config import PipelineConfig
from core.exceptions import *
from core.monitoring import MetricsCollector
from corpus.emnist import write_idx
from corpus.manifest import WordCorpus, WordEntry, load_corpus
from imaging.raster import GrayImage, save_png
from main import build_parser, main
from pipeline.extraction import DescriptorExtractor, WordDescriptors
from pipeline.report import PredictionRow, ReportWriter
from pipeline.runner import WriterIdentificationPipeline, file_digest
from saliency.profile import SaliencyProfile

WRITERS = ("w1", "w2")


def blob_word(path: Path, size: int = 64, sigma: float = 2.8) -> Path:
    """A white word image holding one ink blob."""
    yy, xx = np.mgrid[0:size, 0:size]
    ink = np.exp(-((xx - size / 2) ** 2 + (yy - size / 2) ** 2) / (2 * sigma ** 2))
    return save_png(GrayImage(1.0 - ink), path)


def scores(*values) -> ScoreVector:
    return ScoreVector(WRITERS, np.array(values))


def identification_summary(**extra):
    summary = {
        "words": {"total": 3, "scored": 2, "skipped": 1, "top1": 0.5, "top5": 1.0},
        "pages": {"scored": 2, "top1": 1.0, "top5": 1.0},
        "layer_mode": "fused",
        "alpha": 0.25,
        "pooling": "post",
        "writers": list(WRITERS),
        "words_per_writer": None,
        "config_digest": "ab" * 32,
    }
    summary.update(extra)
    return summary


class TestDescriptorExtractor:
    """Test the word-to-descriptor path with untrained weights."""

    def _extractor(self, strategies=("average", "post")):
        profiles = {layer: SaliencyProfile.uniform(layer, 32) for layer in (1, 2)}
        return DescriptorExtractor(PipelineConfig(), initial_weights(seed=0), profiles, strategies,
                                   layers=[1, 2], metrics=MetricsCollector())

    def test_word_matrices(self, tmp_path):
        """Test one descriptor row per fragment for every strategy and layer."""
        extractor = self._extractor()
        word = extractor.word(blob_word(tmp_path / "word.png"))
        assert word.keypoints >= 1
        assert not word.empty
        for strategy in ("average", "post"):
            for layer in (1, 2):
                matrix = word.matrix(strategy, layer)
                assert matrix.shape == (word.fragments, 160)
        assert extractor.metrics.counter("fragments_extracted") == word.fragments

    def test_blank_word_is_empty(self, tmp_path):
        """Test that a blank page yields an empty word with zero-row matrices."""
        path = save_png(GrayImage(np.ones((48, 48))), tmp_path / "blank.png")
        word = self._extractor().word(path)
        assert word.empty
        assert word.matrix("post", 1).shape == (0, 160)

    def test_words_keep_order(self, tmp_path):
        """Test that threaded extraction returns words in input order."""
        paths = [blob_word(tmp_path / "a.png"), save_png(GrayImage(np.ones((48, 48))), tmp_path / "b.png")]
        words = self._extractor(("average",)).words(paths, jobs=2)
        assert [w.path.name for w in words] == ["a.png", "b.png"]
        assert not words[0].empty and words[1].empty

    def test_filter_hogs(self, tmp_path):
        """Test per-filter HOG stacks used for calibration."""
        hogs = self._extractor().filter_hogs(blob_word(tmp_path / "word.png"))
        assert hogs[1].shape[1:] == (32, 160)
        assert hogs[2].shape[1:] == (32, 160)
        assert hogs[1].shape[0] == hogs[2].shape[0]

    def test_dump(self, tmp_path):
        """Test the inspection files of one word."""
        extractor = self._extractor(("average",))
        out = extractor.dump(blob_word(tmp_path / "word.png"), tmp_path / "dump")
        with (out / "keypoints.csv").open() as handle:
            keypoint_rows = list(csv.DictReader(handle))
        assert len(keypoint_rows) >= 1
        assert {"x", "y", "sigma", "orientation"} <= set(keypoint_rows[0])
        assert len(list((out / "fragments").glob("fragment_*.png"))) >= 1
        with (out / "descriptors.csv").open() as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["strategy", "layer", "fragment", "values"]
        assert len(rows[1][3].split()) == 160


class TestSummaries:
    """Test word and page summaries of scored test words."""

    def _pipeline(self):
        return WriterIdentificationPipeline(PipelineConfig(), jobs=1, metrics=MetricsCollector())

    def test_summarize(self):
        """Test accuracy over scored words and the skipped count."""
        pipeline = self._pipeline()
        entries = [
            WordEntry("w1", "p1", "test", Path("a.png")),
            WordEntry("w1", "p1", "test", Path("b.png")),
            WordEntry("w2", "p2", "test", Path("c.png")),
        ]
        rows, summary = pipeline.summarize(entries, [scores(0.9, 0.1), None, scores(0.7, 0.6)], k=5)
        assert summary["words"] == {"total": 3, "scored": 2, "skipped": 1, "top1": 0.5, "top5": 1.0}
        assert summary["pages"]["scored"] == 2
        assert summary["pages"]["top1"] == 0.5
        assert rows[1].predicted == "" and rows[1].rank_of_truth is None
        assert rows[2].predicted == "w1" and rows[2].rank_of_truth == 2
        assert pipeline.metrics.counter("words_skipped") == 1

    def test_page_mean_can_fix_a_word(self):
        """Test that averaging a page outvotes one wrong word."""
        entries = [WordEntry("w2", "p1", "test", Path(f"{i}.png")) for i in range(3)]
        _, summary = self._pipeline().summarize(
            entries, [scores(0.6, 0.5), scores(0.1, 0.9), scores(0.2, 0.8)])
        assert summary["words"]["top1"] == pytest.approx(2 / 3)
        assert summary["pages"]["top1"] == 1.0

    def test_unlabelled_image(self):
        """Test a single query image without a known writer."""
        rows, summary = self._pipeline().summarize([WordEntry("", "", "test", Path("q.png"))],
                                                   [scores(0.2, 0.8)])
        assert rows[0].predicted == "w2"
        assert rows[0].rank_of_truth is None
        assert summary["words"]["scored"] == 0

    def test_sample_words(self):
        """Test the per-writer cap and corpus order."""
        entries = ([WordEntry("w1", "p1", "test", Path(f"a{i}.png")) for i in range(5)]
                   + [WordEntry("w2", "p2", "test", Path(f"b{i}.png")) for i in range(2)])
        pipeline = self._pipeline()
        sample = pipeline.sample_words(entries, 3, seed=4)
        assert sum(e.writer == "w1" for e in sample) == 3
        assert sum(e.writer == "w2" for e in sample) == 2
        assert sample == [e for e in entries if e in sample]
        assert pipeline.sample_words(entries, 3, seed=4) == sample

    def test_unknown_experiment(self):
        """Test that evaluate refuses unknown experiment names."""
        with pytest.raises(ConfigurationError):
            self._pipeline().cmd_evaluate("colour")

    def test_missing_emnist_paths(self):
        """Test that training without EMNIST inputs is a configuration error."""
        with pytest.raises(ConfigurationError):
            self._pipeline().cmd_train_cnn()


class TestModelFitting:
    """Test SVM fitting and fused scoring on clustered descriptors."""

    CENTERS = {"w1": np.array([1.0, 0.2, 0.0, 0.0, 0.1, 0.0]),
               "w2": np.array([0.0, 0.1, 1.0, 0.3, 0.0, 0.0])}

    def _word(self, name, writer, rng, rows=3, empty=False):
        vectors = {}
        for layer in (1, 2):
            if empty:
                matrix = np.zeros((0, 6))
            else:
                matrix = np.abs(self.CENTERS[writer] + 0.05 * rng.standard_normal((rows, 6)))
                matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
            vectors.setdefault("post", {})[layer] = matrix
        return WordDescriptors(Path(name), rows, 0 if empty else rows, 0, vectors)

    def _corpus(self):
        rng = np.random.default_rng(0)
        entries, descriptors = [], {}
        for writer in ("w1", "w2"):
            for split, count in (("train", 4), ("validation", 2), ("test", 2)):
                for i in range(count):
                    name = f"{writer}_{split}_{i}.png"
                    entries.append(WordEntry(writer, f"{writer}-{split}", split, Path(name)))
                    descriptors[name] = self._word(name, writer, rng)
        entries.append(WordEntry("w2", "w2-test", "test", Path("w2_test_blank.png")))
        descriptors["w2_test_blank.png"] = self._word("w2_test_blank.png", "w2", rng, empty=True)
        corpus = WordCorpus(entries)
        words = {split: [descriptors[str(e.path)] for e in corpus.split(split)]
                 for split in ("train", "validation", "test")}
        return corpus, words

    def test_fused_identification(self):
        """Test that separable writers are identified at word and page level."""
        config = PipelineConfig(svm={"C_grid": [1.0, 10.0], "gamma_grid": [0.5, 2.0]})
        pipeline = WriterIdentificationPipeline(config, jobs=2, metrics=MetricsCollector())
        corpus, words = self._corpus()
        fitted = pipeline.fit_models(corpus, words, "post", "fused")
        assert sorted(fitted.layers) == [1, 2]
        assert 0.0 <= fitted.alpha <= 1.0
        assert fitted.layers[1].writers == ["w1", "w2"]
        scores = pipeline.mode_scores(fitted, words["test"], "post")
        assert sum(s is None for s in scores) == 1
        _, summary = pipeline.summarize(corpus.split("test"), scores)
        assert summary["words"]["scored"] == 4
        assert summary["words"]["skipped"] == 1
        assert summary["words"]["top1"] == 1.0
        assert summary["pages"]["top1"] == 1.0

    def test_single_layer_mode(self):
        """Test conv2-only models without a fusion weight."""
        config = PipelineConfig(layer_mode="conv2", svm={"C_grid": [1.0], "gamma_grid": [1.0]})
        pipeline = WriterIdentificationPipeline(config, metrics=MetricsCollector())
        corpus, words = self._corpus()
        fitted = pipeline.fit_models(corpus, words, "post", "conv2")
        assert list(fitted.layers) == [2]
        assert fitted.alpha is None
        scores = pipeline.mode_scores(fitted, words["test"], "post")
        assert all(s is None or s.provenance == "conv2" for s in scores)


class TestReports:
    """Test report files."""

    def test_prediction_row_padding(self):
        """Test that the top list fills five columns."""
        row = PredictionRow("a.png", "w1", "w2", 2, ["w2", "w1"])
        assert row.to_csv() == ["a.png", "w1", "w2", "2", "w2", "w1", "", "", ""]
        assert PredictionRow("b.png", "w1").to_csv()[2:4] == ["", ""]

    def test_identification_report(self, tmp_path):
        """Test predictions.csv, summary.json and summary.md."""
        rows = [PredictionRow("a.png", "w1", "w1", 1, ["w1", "w2"]), PredictionRow("b.png", "w1")]
        paths = ReportWriter(tmp_path / "report").write_identification(rows, identification_summary())
        with paths["predictions"].open() as handle:
            lines = list(csv.reader(handle))
        assert lines[0][:4] == ["word_path", "true_writer", "predicted", "rank_of_truth"]
        assert len(lines) == 3
        assert json.loads(paths["summary"].read_text())["alpha"] == 0.25
        markdown = paths["markdown"].read_text()
        assert "| Word | 2 | 0.5000 | 1.0000 |" in markdown
        assert "alpha = 0.25" in markdown
        assert "(1 without usable fragments)" in markdown

    def test_identification_without_pages(self, tmp_path):
        """Test a report of one query image."""
        summary = identification_summary(pages=None, alpha=None, layer_mode="conv1")
        markdown = ReportWriter(tmp_path).write_identification([], summary)["markdown"].read_text()
        assert "| Page |" not in markdown
        assert "alpha" not in markdown

    def test_experiment_report(self, tmp_path):
        """Test the table of an experiment."""
        table = [{"pooling": "average", "word_top1": 0.5}, {"pooling": "post", "word_top1": 0.75, "alpha": 0.3}]
        paths = ReportWriter(tmp_path).write_experiment("pooling", table,
                                                        {"config_digest": "cd" * 32, "note": "desk scale"})
        with paths["table"].open() as handle:
            rows = list(csv.DictReader(handle))
        assert list(rows[0]) == ["pooling", "word_top1", "alpha"]
        assert rows[1]["alpha"] == "0.3"
        assert json.loads(paths["summary"].read_text())["experiment"] == "pooling"
        assert "desk scale" in paths["markdown"].read_text()


class TestCommandLine:
    """Test argument parsing and exit codes."""

    def test_parser(self):
        """Test flags of the identify command."""
        args = build_parser().parse_args(["identify", "--pooling", "pre", "--layer", "conv2",
                                          "--words-per-writer", "5", "--force"])
        assert args.command == "identify"
        assert args.pooling == "pre" and args.layer == "conv2"
        assert args.words_per_writer == 5 and args.force

    def test_protocol_flag(self):
        """Test that --protocol is parsed for every command."""
        assert build_parser().parse_args(["train-writers", "--protocol", "iam"]).protocol == "iam"
        assert build_parser().parse_args(["identify"]).protocol is None
        with pytest.raises(SystemExit):
            build_parser().parse_args(["identify", "--protocol", "random"])

    def test_unknown_command(self):
        """Test that argparse rejects unknown commands."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["deploy"])
        with pytest.raises(SystemExit):
            build_parser().parse_args(["evaluate", "--experiment", "colour"])

    def test_missing_config_exit_code(self, tmp_path):
        """Test exit code 2 for a missing config file."""
        assert main(["calibrate", "--config", str(tmp_path / "absent.json")]) == 2

    def test_invalid_config_exit_code(self, tmp_path):
        """Test exit code 2 for unknown config keys."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"pooling": "max"}))
        assert main(["calibrate", "--config", str(path)]) == 2

    def test_missing_weights_exit_code(self, tmp_path):
        """Test exit code 3 when the network weights are absent."""
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"paths": {"weights": str(tmp_path / "absent.sidw"),
                                              "calibration_manifest": str(tmp_path / "manifest.csv")}}))
        assert main(["calibrate", "--config", str(path)]) == 3


def emnist_files(root: Path, per_letter: int = 3, seed: int = 0):
    """IDX image/label files of letter-like glyphs: a bar plus two letter-specific dots."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for letter in range(26):
        for _ in range(per_letter):
            glyph = np.zeros((28, 28), dtype=np.uint8)
            glyph[4:24, 12:15] = 255
            for _ in range(2):
                r, c = rng.integers(3, 20, size=2)
                side = int(rng.integers(4, 7))
                glyph[r:r + side, c:c + side] = 255
            images.append(glyph.T)  # stored transposed, like EMNIST
            labels.append(letter + 1)
    root.mkdir(parents=True, exist_ok=True)
    write_idx(np.array(images), np.array(labels), root / "images.idx", root / "labels.idx")
    return root / "images.idx", root / "labels.idx"


def small_config(root: Path, **overrides) -> PipelineConfig:
    """A desk-sized config with every artifact under ``root``."""
    images, labels = root / "emnist" / "images.idx", root / "emnist" / "labels.idx"
    data = {
        "synthetic": {"num_writers": 3, "words_per_writer": 8, "words_per_page": 4,
                      "min_letters": 3, "max_letters": 4},
        "training": {"epochs": 1, "batch_size": 16},
        "saliency": {"components": 2, "bins": 4, "method": "dense",
                     "calibration_writers": 2, "words_per_writer": 3},
        "svm": {"C_grid": [1.0, 10.0], "gamma_grid": [0.5, 2.0], "validation_fraction": 0.5},
        "fusion": {"alpha_points": 5},
        "paths": {
            "emnist_train_images": str(images),
            "emnist_train_labels": str(labels),
            "synthetic_dir": str(root / "synthetic"),
            "weights": str(root / "convnet.sidw"),
            "profiles_dir": str(root / "saliency"),
            "bundle": str(root / "writers.sidb"),
            "report_dir": str(root / "report"),
        },
    }
    data.update(overrides)
    return PipelineConfig.model_validate(data)


@pytest.fixture(scope="class")
def trained_root(tmp_path_factory):
    """Synthesize, train the network, calibrate under post pooling, train writers under pre pooling."""
    root = tmp_path_factory.mktemp("e2e")
    emnist_files(root / "emnist")
    pipeline = WriterIdentificationPipeline(small_config(root), metrics=MetricsCollector())
    pipeline.cmd_synth_corpus()
    pipeline.cmd_train_cnn()
    pipeline.cmd_calibrate()
    WriterIdentificationPipeline(small_config(root, pooling="pre"), metrics=MetricsCollector()).cmd_train_writers()
    return root


class TestEndToEnd:
    """Test every command on a tiny synthetic corpus."""

    def test_artifacts_written(self, trained_root):
        """Test the corpus, weights, profiles and bundle on disk."""
        corpus = load_corpus(trained_root / "synthetic" / "corpus" / "manifest.csv")
        calibration = load_corpus(trained_root / "synthetic" / "calibration" / "manifest.csv",
                                  require_test=False)
        assert corpus.writers == ["w01", "w02", "w03"]
        assert calibration.writers == ["c01", "c02"]
        assert len(corpus.split("test")) == 12
        assert (trained_root / "convnet.sidw").exists()
        assert (trained_root / "saliency" / "conv1.json").exists()
        assert (trained_root / "saliency" / "conv2.json").exists()
        bundle = load_bundle(trained_root / "writers.sidb")
        assert bundle.pooling == "pre"
        assert sorted(bundle.layers) == [1, 2]
        assert bundle.writers == ["w01", "w02", "w03"]

    def test_profiles_outlive_pooling_changes(self, trained_root):
        """Test that profiles calibrated under post pooling load under average pooling."""
        pipeline = WriterIdentificationPipeline(small_config(trained_root, pooling="average"),
                                                metrics=MetricsCollector())
        profiles = pipeline.profiles([1, 2], file_digest(trained_root / "convnet.sidw"))
        assert [profiles[l].layer for l in (1, 2)] == [1, 2]

    def test_profiles_refuse_other_hog(self, trained_root):
        """Test that profiles from other HOG parameters are rejected."""
        config = small_config(trained_root)
        pipeline = WriterIdentificationPipeline(
            config.model_copy(update={"hog": config.hog.with_bins(8)}), metrics=MetricsCollector())
        with pytest.raises(DigestMismatch):
            pipeline.profiles([1], file_digest(trained_root / "convnet.sidw"))

    def test_identify_report(self, trained_root):
        """Test the fused identification report of the test split."""
        summary = WriterIdentificationPipeline(small_config(trained_root, pooling="pre"),
                                               metrics=MetricsCollector()).cmd_identify()
        assert summary["layer_mode"] == "fused"
        assert summary["pooling"] == "pre"
        assert 0.0 <= summary["alpha"] <= 1.0
        assert summary["writers"] == ["w01", "w02", "w03"]
        assert summary["words"]["total"] == 12
        assert 0.0 <= summary["words"]["top1"] <= summary["words"]["top5"] <= 1.0
        assert summary["pages"]["scored"] <= 3
        report = trained_root / "report"
        with (report / "predictions.csv").open() as handle:
            assert len(list(csv.reader(handle))) == 13
        assert json.loads((report / "summary.json").read_text())["layer_mode"] == "fused"
        assert (report / "summary.md").exists()

    def test_identify_single_layer_of_fused_bundle(self, trained_root):
        """Test that --layer conv1 scores with the bundle's conv1 models only."""
        summary = WriterIdentificationPipeline(small_config(trained_root, pooling="pre", layer_mode="conv1"),
                                               metrics=MetricsCollector()).cmd_identify(words_per_writer=2)
        assert summary["layer_mode"] == "conv1"
        assert summary["alpha"] is None
        assert summary["words"]["total"] == 6

    def test_identify_layer_missing_from_bundle(self, trained_root):
        """Test that a layer mode the bundle cannot serve fails even when forced."""
        config = small_config(trained_root, pooling="pre", layer_mode="conv3")
        with pytest.raises(LayerNotInBundle) as excinfo:
            WriterIdentificationPipeline(config, force=True, metrics=MetricsCollector()).cmd_identify()
        assert "conv3" in excinfo.value.message
        assert excinfo.value.exit_code == 4

    def test_synth_rejects_untiled_pages(self, tmp_path):
        """Test that only corpus synthesis checks the page layout."""
        config = small_config(tmp_path, synthetic={"num_writers": 3, "words_per_writer": 6, "words_per_page": 4})
        pipeline = WriterIdentificationPipeline(config, metrics=MetricsCollector())
        with pytest.raises(ValidationError):
            pipeline.cmd_synth_corpus()


class TestIamProtocol:
    """Test the one-train-page, one-test-page re-split."""

    def test_word_corpus_resplits_pages(self, tmp_path):
        """Test that manifest splits are replaced by one train and one test page per writer."""
        rows = [("w1", f"p{p}", "train", f"w1_p{p}_{i}.png") for p in (1, 2, 3) for i in range(2)]
        rows += [("w2", "p1", "train", f"w2_p1_{i}.png") for i in range(4)]
        for *_, name in rows:
            save_png(GrayImage(np.ones((20, 20))), tmp_path / name)
        lines = ["writer_id,page_id,split,word_path"] + [",".join(row) for row in rows]
        (tmp_path / "manifest.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        config = PipelineConfig.model_validate({"protocol": "iam",
                                                "paths": {"corpus_manifest": str(tmp_path / "manifest.csv")}})
        corpus = WriterIdentificationPipeline(config, metrics=MetricsCollector()).word_corpus()
        w1_pages = {split: {e.page for e in corpus.words_of("w1", split)} for split in ("train", "test")}
        assert len(w1_pages["train"]) == 1 and len(w1_pages["test"]) == 1
        assert w1_pages["train"] != w1_pages["test"]
        assert len(corpus.words_of("w1", "validation")) == 1
        assert len(corpus.words_of("w2", "test")) == 2
        assert len(corpus.entries) == 8


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
