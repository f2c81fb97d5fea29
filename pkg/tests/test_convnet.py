#!/usr/bin/env python3
"""Writer-independent network tests: structure, weights files, training and gradients."""

import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from convnet.diagnostics import gradient_check
from convnet.features import FeatureExtractor, forward
from convnet.network import WriterIndependentNet, build_network, initial_weights, spatial_sizes, tensor_shapes
from convnet.training import train_emnist
from convnet.weights import load_weights, save_weights
from core.config import ConvSpec, TrainingConfig
from core.exceptions import *
from corpus.emnist import LabeledImages
from imaging.raster import GrayImage
from keypoints.detector import Keypoint
from keypoints.fragments import Fragment


def tiny_letters(count: int = 24, classes: int = 26, seed: int = 0) -> LabeledImages:
    rng = np.random.default_rng(seed)
    return LabeledImages(images=rng.random((count, 28, 28)), labels=rng.integers(0, classes, count))


def toy_strokes(per_class: int, side: int = 28, seed: int = 0) -> LabeledImages:
    """Horizontal bars, vertical bars, crosses and blank glyphs at random offsets."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for label in range(4):
        for _ in range(per_class):
            glyph = np.zeros((side, side))
            r, c = rng.integers(4, side - 4, size=2)
            if label in (0, 2):
                glyph[r - 1:r + 1, 2:side - 2] = 1.0
            if label in (1, 2):
                glyph[2:side - 2, c - 1:c + 1] = 1.0
            images.append(glyph + 0.05 * rng.random((side, side)))
            labels.append(label)
    return LabeledImages(images=np.array(images), labels=np.array(labels))


class TestNetwork:
    """Test the block plan and forward passes."""

    def test_spatial_sizes(self):
        """Test map sides through the stride plan."""
        assert spatial_sizes(ConvSpec(), 17) == [17, 17, 9, 9, 5, 5]
        assert spatial_sizes(ConvSpec(), 28) == [28, 28, 14, 14, 7, 7]

    def test_feature_map_shapes(self):
        """Test the filters and sides of every block output."""
        net = WriterIndependentNet().eval()
        with torch.no_grad():
            outputs = net.feature_maps(torch.zeros(2, 1, 21, 21), range(1, 7))
        assert [tuple(outputs[l].shape[1:]) for l in range(1, 7)] == [
            (32, 21, 21), (32, 21, 21), (64, 11, 11), (64, 11, 11), (128, 6, 6), (128, 6, 6)
        ]

    @pytest.mark.parametrize("side,expected", [(25, [25, 25, 13, 13, 7, 7]), (33, [33, 33, 17, 17, 9, 9])])
    def test_forward_shape_algebra(self, side, expected):
        """Test that block outputs follow ceil halving at the stride-2 blocks."""
        assert spatial_sizes(ConvSpec(), side) == expected
        net = WriterIndependentNet().eval()
        with torch.no_grad():
            outputs = net.feature_maps(torch.zeros(1, 1, side, side), range(1, 7))
        filters = [b.filters for b in ConvSpec().blocks]
        assert [tuple(outputs[l].shape[1:]) for l in range(1, 7)] == [
            (f, s, s) for f, s in zip(filters, expected)
        ]

    def test_classification_head(self):
        """Test logits over 26 letters for a 28x28 glyph."""
        net = WriterIndependentNet().eval()
        with torch.no_grad():
            logits = net(torch.zeros(3, 1, 28, 28))
        assert logits.shape == (3, 26)

    def test_layers_out_of_range(self):
        """Test the requested-layer check."""
        with pytest.raises(ValueError):
            WriterIndependentNet().feature_maps(torch.zeros(1, 1, 17, 17), [7])

    def test_build_does_not_touch_global_rng(self):
        """Test that building a network leaves the torch RNG untouched."""
        torch.manual_seed(5)
        expected = torch.rand(1)
        torch.manual_seed(5)
        build_network(ConvSpec())
        assert torch.equal(torch.rand(1), expected)

    def test_tensor_names(self):
        """Test the persisted tensor list."""
        shapes = tensor_shapes(ConvSpec())
        assert shapes["blocks.0.conv.weight"] == (32, 1, 3, 3)
        assert shapes["head.weight"] == (26, 128)
        assert not any(name.endswith("num_batches_tracked") for name in shapes)


class TestWeights:
    """Test weight containers."""

    def test_save_and_load(self, tmp_path):
        """Test that a reloaded network produces identical features."""
        weights = initial_weights(seed=3)
        path = save_weights(weights, tmp_path / "net.sidw")
        loaded = load_weights(path, ConvSpec())
        assert list(loaded.tensors) == list(weights.tensors)
        patch = np.random.default_rng(0).random((17, 17))
        a = FeatureExtractor(weights).stacks([patch], [2])[0][2].maps
        b = FeatureExtractor(loaded).stacks([patch], [2])[0][2].maps
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_corrupted_file(self, tmp_path):
        """Test that a flipped byte fails the checksum."""
        path = save_weights(initial_weights(), tmp_path / "net.sidw")
        data = bytearray(path.read_bytes())
        data[-10] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumMismatch):
            load_weights(path)

    def test_spec_mismatch(self, tmp_path):
        """Test loading weights for another head size."""
        path = save_weights(initial_weights(), tmp_path / "net.sidw")
        with pytest.raises(WeightMismatch):
            load_weights(path, ConvSpec(num_classes=10))

    def test_missing_tensor(self):
        """Test validation of the tensor set."""
        weights = initial_weights()
        del weights.tensors["head.bias"]
        with pytest.raises(WeightMismatch):
            weights.validate()

    def test_bad_running_variance(self):
        """Test the positive-variance check."""
        weights = initial_weights()
        weights.tensors["blocks.0.bn.running_var"][0] = 0.0
        with pytest.raises(WeightMismatch):
            weights.validate()


class TestFeatureExtraction:
    """Test inference on fragments."""

    def test_forward_single_fragment(self):
        """Test one fragment's conv1 stack."""
        kp = Keypoint(x=10.0, y=10.0, sigma=1.6, orientation=0.0, octave=0, response=1.0)
        fragment = Fragment(patch=GrayImage(np.ones((21, 21))), side=21, source=kp)
        stack = forward(fragment, initial_weights(), 1)
        assert stack.layer == 1
        assert stack.maps.shape == (32, 21, 21)

    def test_mixed_sizes_keep_order(self):
        """Test batching by size with outputs in input order."""
        rng = np.random.default_rng(2)
        patches = [rng.random((17, 17)), rng.random((21, 21)), rng.random((17, 17))]
        extractor = FeatureExtractor(initial_weights(), batch_size=1)
        stacks = extractor.stacks(patches, [1, 3])
        assert [s[3].maps.shape for s in stacks] == [(64, 9, 9), (64, 11, 11), (64, 9, 9)]
        single = extractor.stacks([patches[2]], [1])[0][1].maps
        np.testing.assert_allclose(stacks[2][1].maps, single, atol=1e-6)

    def test_too_small(self):
        """Test that patches below the minimum side are refused."""
        with pytest.raises(ShapeError):
            FeatureExtractor(initial_weights()).stacks([np.ones((15, 15))], [1])


class TestTraining:
    """Test the training loop on a handful of random glyphs."""

    def test_short_run(self):
        """Test that training returns the best epoch and valid weights."""
        config = TrainingConfig(epochs=2, batch_size=8, lr_step_epochs=1)
        weights, history = train_emnist(tiny_letters(24), tiny_letters(8, seed=1), training=config, seed=0)
        assert len(history.epochs) == 2
        assert history.best_epoch in (1, 2)
        assert 0.0 <= history.best_val_accuracy <= 1.0
        assert history.epochs[1]["lr"] == pytest.approx(config.learning_rate * config.lr_decay)
        weights.validate()
        assert weights.epoch == history.best_epoch

    def test_label_out_of_range(self):
        """Test labels beyond the head."""
        bad = LabeledImages(images=np.zeros((2, 28, 28)), labels=np.array([0, 26]))
        with pytest.raises(LabelOutOfRange):
            train_emnist(bad, tiny_letters(4), training=TrainingConfig(epochs=1))

    def test_empty_validation(self):
        """Test an empty validation set."""
        empty = LabeledImages(images=np.zeros((0, 28, 28)), labels=np.zeros(0, dtype=np.int64))
        with pytest.raises(EmptyDataset):
            train_emnist(tiny_letters(4), empty, training=TrainingConfig(epochs=1))

    def test_training_is_bit_identical_for_a_seed(self):
        """Test that two runs with the same seed produce the same tensors."""
        config = TrainingConfig(epochs=2, batch_size=8, lr_step_epochs=1)
        first, _ = train_emnist(tiny_letters(24), tiny_letters(8, seed=1), training=config, seed=7)
        second, _ = train_emnist(tiny_letters(24), tiny_letters(8, seed=1), training=config, seed=7)
        assert list(first.tensors) == list(second.tensors)
        for name in first.tensors:
            np.testing.assert_array_equal(first.tensors[name], second.tensors[name])

    def test_toy_strokes_are_learned(self):
        """Test that four distinct stroke shapes reach at least 99% validation accuracy."""
        spec = ConvSpec(num_classes=4)
        config = TrainingConfig(epochs=8, batch_size=16, lr_step_epochs=10)
        weights, history = train_emnist(toy_strokes(32, seed=0), toy_strokes(10, seed=1), spec,
                                        training=config, seed=0)
        assert history.best_val_accuracy >= 0.99
        assert weights.val_accuracy == history.best_val_accuracy


class TestGradientCheck:
    """Test backprop against finite differences."""

    def test_gradients_agree(self):
        """Test the worst relative error on a small batch."""
        torch.manual_seed(0)
        net = WriterIndependentNet()
        rng = np.random.default_rng(0)
        report = gradient_check(net, rng.random((3, 17, 17)), np.array([0, 1, 2]), samples_per_group=2)
        assert report.checked > 0
        assert report.max_relative_error < 1e-3

    def test_large_steps_are_skipped_as_kinks(self):
        """Test that steps flipping ReLU units are not compared."""
        torch.manual_seed(0)
        net = WriterIndependentNet()
        rng = np.random.default_rng(0)
        report = gradient_check(net, rng.random((3, 17, 17)), np.array([0, 1, 2]), eps=0.5, samples_per_group=2)
        assert report.skipped_kinks > 0
        assert report.checked + report.skipped_kinks == sum(
            min(2, p.numel()) for p in net.parameters()
        )


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
