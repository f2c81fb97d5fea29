#!/usr/bin/env python3
"""EMNIST readers, word manifests, split protocols and the synthetic corpus."""

import gzip
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.config import SyntheticConfig
from core.exceptions import *
from corpus.emnist import (
    IMAGES_MAGIC,
    LabeledImages,
    load_emnist,
    read_idx_images,
    read_idx_labels,
    remap_labels,
    write_idx,
)
from corpus.manifest import iam_protocol, load_corpus, write_manifest
from corpus.synthetic import (
    SyntheticStyle,
    estimate_slant,
    generate_synthetic_corpus,
    letter_pools,
    render_word,
    writer_id,
    writer_styles,
)
from imaging.raster import GrayImage, load_grayscale, save_png


def bar_glyphs(per_letter: int = 2) -> LabeledImages:
    """Bright vertical bars standing in for EMNIST letters."""
    glyph = np.zeros((28, 28))
    glyph[4:24, 12:15] = 1.0
    images = np.repeat(glyph[None], 26 * per_letter, axis=0)
    return LabeledImages(images=images, labels=np.repeat(np.arange(26), per_letter))


def write_words(root: Path, rows):
    """Create blank word images and a manifest for (writer, page, split, name) rows."""
    for _, _, _, name in rows:
        save_png(GrayImage(np.ones((20, 20))), root / name)
    lines = ["writer_id,page_id,split,word_path"] + [",".join(row) for row in rows]
    manifest = root / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


BASIC_ROWS = [
    ("w1", "p1", "train", "w1_a.png"),
    ("w1", "p1", "train", "w1_b.png"),
    ("w1", "p2", "test", "w1_c.png"),
    ("w2", "p3", "train", "w2_a.png"),
    ("w2", "p4", "test", "w2_b.png"),
]


class TestEmnist:
    """Test IDX decoding and label schemes."""

    def test_idx_header_and_transpose(self, tmp_path):
        """Test that stored glyphs come back upright."""
        stored = np.zeros((2, 28, 28), dtype=np.uint8)
        stored[0, 3, 7] = 255
        write_idx(stored, np.array([1, 26]), tmp_path / "img", tmp_path / "lbl")
        raw = (tmp_path / "img").read_bytes()
        assert struct.unpack(">IIII", raw[:16]) == (IMAGES_MAGIC, 2, 28, 28)
        data = load_emnist(tmp_path / "img", tmp_path / "lbl")
        assert data.images.shape == (2, 28, 28)
        assert data.images[0, 7, 3] == 1.0
        assert list(data.labels) == [0, 25]

    def test_gzip_input(self, tmp_path):
        """Test transparently decompressed files."""
        stored = np.full((1, 28, 28), 51, dtype=np.uint8)
        write_idx(stored, np.array([3]), tmp_path / "img", tmp_path / "lbl")
        for name in ("img", "lbl"):
            (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
        data = load_emnist(tmp_path / "img.gz", tmp_path / "lbl.gz")
        assert data.images[0, 0, 0] == pytest.approx(0.2)

    def test_letters_scheme_drops_zero(self):
        """Test the 1..26 letters mapping."""
        labels, mask = remap_labels(np.array([0, 1, 26]), "letters")
        assert list(mask) == [False, True, True]
        assert list(labels[mask]) == [0, 25]

    def test_byclass_merges_case(self):
        """Test that upper and lower case of a letter share a class."""
        labels, mask = remap_labels(np.array([5, 10, 35, 36, 61]), "byclass")
        assert list(mask) == [False, True, True, True, True]
        assert list(labels[mask]) == [0, 25, 0, 25]

    def test_bad_magic(self, tmp_path):
        """Test a file with the wrong magic number."""
        (tmp_path / "img").write_bytes(struct.pack(">IIII", 0x0801, 1, 28, 28) + bytes(784))
        with pytest.raises(BadMagic):
            read_idx_images(tmp_path / "img")

    def test_truncated(self, tmp_path):
        """Test a payload shorter than the header promises."""
        (tmp_path / "img").write_bytes(struct.pack(">IIII", IMAGES_MAGIC, 2, 28, 28) + bytes(784))
        with pytest.raises(TruncatedFile):
            read_idx_images(tmp_path / "img")
        (tmp_path / "lbl").write_bytes(b"\x00\x00")
        with pytest.raises(TruncatedFile):
            read_idx_labels(tmp_path / "lbl")

    def test_count_mismatch(self, tmp_path):
        """Test image and label files of different lengths."""
        write_idx(np.zeros((2, 28, 28)), np.array([1, 2]), tmp_path / "img", tmp_path / "lbl")
        write_idx(np.zeros((3, 28, 28)), np.array([1, 2, 3]), tmp_path / "img3", tmp_path / "lbl3")
        with pytest.raises(CountMismatch):
            load_emnist(tmp_path / "img", tmp_path / "lbl3")

    def test_missing(self, tmp_path):
        """Test a missing IDX file."""
        with pytest.raises(MissingFile):
            read_idx_labels(tmp_path / "absent")

    def test_split_and_digest(self):
        """Test the seeded split and the dataset digest."""
        data = bar_glyphs(4)
        train, val = data.split(0.25, seed=1)
        assert (len(train), len(val)) == (78, 26)
        again, _ = data.split(0.25, seed=1)
        assert train.digest() == again.digest()
        assert data.inverted().images[0, 0, 0] == 1.0


class TestManifest:
    """Test corpus manifests."""

    def test_load(self, tmp_path):
        """Test a valid manifest."""
        corpus = load_corpus(write_words(tmp_path, BASIC_ROWS))
        assert corpus.writers == ["w1", "w2"]
        assert len(corpus.split("train")) == 3
        assert [e.path.name for e in corpus.words_of("w1", "test")] == ["w1_c.png"]
        assert set(corpus.pages("train")) == {("w1", "p1"), ("w2", "p3")}

    def test_missing_image(self, tmp_path):
        """Test a row pointing at nothing."""
        manifest = write_words(tmp_path, BASIC_ROWS)
        (tmp_path / "w2_a.png").unlink()
        with pytest.raises(MissingImage):
            load_corpus(manifest)

    def test_duplicate_row(self, tmp_path):
        """Test a repeated row."""
        with pytest.raises(DuplicateRow):
            load_corpus(write_words(tmp_path, BASIC_ROWS + [BASIC_ROWS[0]]))

    def test_unknown_split(self, tmp_path):
        """Test a split name outside train/validation/test."""
        with pytest.raises(ManifestError) as excinfo:
            load_corpus(write_words(tmp_path, BASIC_ROWS + [("w2", "p4", "dev", "w2_c.png")]))
        assert excinfo.value.details["split"] == "dev"
        assert excinfo.value.details["line"] == 7

    def test_page_ids_are_per_writer(self, tmp_path):
        """Test writers that number their own pages from p1."""
        rows = [
            ("w1", "p1", "train", "w1_a.png"),
            ("w1", "p2", "test", "w1_b.png"),
            ("w2", "p1", "train", "w2_a.png"),
            ("w2", "p2", "test", "w2_b.png"),
        ]
        corpus = load_corpus(write_words(tmp_path, rows))
        assert set(corpus.pages("test")) == {("w1", "p2"), ("w2", "p2")}
        assert [e.path.name for e in corpus.pages("train")[("w2", "p1")]] == ["w2_a.png"]

    def test_writer_without_test(self, tmp_path):
        """Test the per-writer test split requirement."""
        rows = [r for r in BASIC_ROWS if r[3] != "w2_b.png"]
        manifest = write_words(tmp_path, rows)
        with pytest.raises(WriterWithoutTest):
            load_corpus(manifest)
        assert len(load_corpus(manifest, require_test=False)) == 4

    def test_bad_header(self, tmp_path):
        """Test a manifest with other columns."""
        manifest = tmp_path / "manifest.csv"
        manifest.write_text("writer,path\nw1,a.png\n", encoding="utf-8")
        with pytest.raises(ManifestError) as excinfo:
            load_corpus(manifest)
        assert "word_path" in excinfo.value.message
        assert excinfo.value.details["unexpected"] == ["writer", "path"]

    def test_missing_manifest(self, tmp_path):
        """Test a manifest that does not exist."""
        with pytest.raises(MissingFile):
            load_corpus(tmp_path / "manifest.csv")

    def test_rewritten_manifest_loads(self, tmp_path):
        """Test that written manifests use relative paths."""
        corpus = load_corpus(write_words(tmp_path, BASIC_ROWS))
        copy = write_manifest(corpus, tmp_path / "copy.csv")
        assert "w1_a.png" in copy.read_text().splitlines()[1]
        assert len(load_corpus(copy)) == 5

    def test_validation_carve(self, tmp_path):
        """Test that writers keep at least one train word."""
        corpus = load_corpus(write_words(tmp_path, BASIC_ROWS)).with_validation(0.5, seed=0)
        assert [e.writer for e in corpus.split("validation")] == ["w1"]
        assert len(corpus.words_of("w1", "train")) == 1
        assert len(corpus.words_of("w2", "train")) == 1
        assert corpus.with_validation(0.5, seed=1) is corpus


class TestIamProtocol:
    """Test the one-train-page, one-test-page split."""

    def test_single_page_halves(self):
        """Test a ten-word single-page writer."""
        words = [("w1", "p1", f"w1_{i:02d}.png") for i in range(10)] + [("w2", "p9", "w2_a.png"), ("w2", "p9", "w2_b.png")]
        corpus = iam_protocol(words, seed=0)
        assert len(corpus.words_of("w1", "train")) == 5
        assert len(corpus.words_of("w1", "test")) == 5
        assert [e.path.name for e in corpus.words_of("w1", "train")][0] == "w1_00.png"

    def test_odd_count_trains_larger_half(self):
        """Test the ceil split."""
        corpus = iam_protocol([("w1", "p1", f"{i}.png") for i in range(5)], seed=0)
        assert len(corpus.words_of("w1", "train")) == 3

    def test_two_pages_chosen(self):
        """Test writers with several pages."""
        words = [("w1", f"p{p}", f"p{p}_{i}.png") for p in range(1, 5) for i in range(3)]
        corpus = iam_protocol(words, seed=4)
        train_pages = {e.page for e in corpus.words_of("w1", "train")}
        test_pages = {e.page for e in corpus.words_of("w1", "test")}
        assert len(train_pages) == 1 and len(test_pages) == 1
        assert int(train_pages.pop()[1:]) < int(test_pages.pop()[1:])
        assert len(corpus) == 6

    def test_single_word_writer_left_out(self):
        """Test that a writer with one word is skipped."""
        corpus = iam_protocol([("w1", "p1", "a.png"), ("w2", "p2", "b.png"), ("w2", "p2", "c.png")], seed=0)
        assert corpus.writers == ["w2"]


class TestSyntheticCorpus:
    """Test the synthetic handwriting generator."""

    CONFIG = SyntheticConfig(num_writers=2, words_per_writer=4, words_per_page=2, test_pages=1)

    def test_writer_ids(self):
        """Test zero-padded writer names."""
        assert writer_id(0) == "w01"
        assert writer_id(11, prefix="c") == "c12"

    def test_styles_spread_slants(self):
        """Test evenly spaced distinct slants."""
        styles = writer_styles(5, SyntheticConfig(), seed=0)
        np.testing.assert_allclose(sorted(s.slant_deg for s in styles), np.linspace(-15, 15, 5))
        assert styles == writer_styles(5, SyntheticConfig(), seed=0)
        assert min(a.distance(b) for a in styles for b in styles if a is not b) > 0

    def test_insufficient_glyphs(self):
        """Test letters without enough exemplars."""
        with pytest.raises(InsufficientGlyphs):
            letter_pools(bar_glyphs(1), per_letter=2)

    def test_layout_and_splits(self, tmp_path):
        """Test files, pages and the test split of a small corpus."""
        corpus = generate_synthetic_corpus(bar_glyphs(), tmp_path, self.CONFIG, seed=3)
        assert corpus.writers == ["w01", "w02"]
        assert len(corpus) == 8
        assert (tmp_path / "manifest.csv").exists()
        assert (tmp_path / "w01" / "page_02" / "word_004.png").exists()
        assert {e.page for e in corpus.split("test")} == {"w01-p02", "w02-p02"}

    def test_deterministic(self, tmp_path):
        """Test that the same seed writes the same pixels."""
        a = generate_synthetic_corpus(bar_glyphs(), tmp_path / "a", self.CONFIG, seed=3)
        b = generate_synthetic_corpus(bar_glyphs(), tmp_path / "b", self.CONFIG, seed=3)
        for x, y in zip(a.entries, b.entries):
            np.testing.assert_array_equal(load_grayscale(x.path).data, load_grayscale(y.path).data)

    def test_calibration_corpus_is_all_train(self, tmp_path):
        """Test the calibration variant."""
        corpus = generate_synthetic_corpus(bar_glyphs(), tmp_path, self.CONFIG, seed=3,
                                           calibration=True, prefix="c")
        assert corpus.writers == ["c01", "c02"]
        assert not corpus.split("test")

    def test_rendered_word_is_dark_on_white(self):
        """Test image range and background."""
        style = writer_styles(2, SyntheticConfig(), seed=0)[0]
        img = render_word([bar_glyphs().images[0]] * 3, style, SyntheticConfig(), np.random.default_rng(0))
        assert img.height == 48
        assert img.data.min() < 0.5
        assert img.data[0, 0] == 1.0
        assert img.data.max() <= 1.0

    @pytest.mark.parametrize("slant", [-12.0, 0.0, 10.0])
    def test_slant_is_recoverable(self, slant):
        """Test that the moment estimate recovers the rendered slant."""
        style = SyntheticStyle(writer="w01", slant_deg=slant, thickness=0, scale_jitter=0.0,
                               baseline_amplitude=0.0, baseline_period=40.0, baseline_phase=0.0, glyph_seed=0)
        img = render_word([bar_glyphs().images[0]] * 4, style, SyntheticConfig(), np.random.default_rng(0))
        assert estimate_slant(img) == pytest.approx(slant, abs=1.5)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
