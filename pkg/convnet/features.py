"""Inference-time feature maps for fragments."""

from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

import numpy as np
import torch

from core.exceptions import ShapeError
from core.logger import setup_logger
from convnet.network import NetWeights, WriterIndependentNet
from keypoints.fragments import Fragment

logger = setup_logger("convnet")


@dataclass(frozen=True)
class FeatureStack:
    """The F maps of one convolution layer for one fragment, shape (F, H, W)."""
    layer: int
    maps: np.ndarray

    @property
    def filters(self) -> int:
        return int(self.maps.shape[0])


class FeatureExtractor:
    """Runs fragments through a trained network in inference mode.

    Fragments of equal side are batched together; outputs keep input order.
    """

    def __init__(self, weights: NetWeights, min_side: int = 17, batch_size: int = 64):
        self.weights = weights
        self.net: WriterIndependentNet = weights.to_network()
        self.min_side = min_side
        self.batch_size = batch_size

    def _check(self, patch: np.ndarray):
        if patch.ndim != 2 or min(patch.shape) < self.min_side:
            raise ShapeError(
                f"Fragment {patch.shape} is smaller than {self.min_side}px",
                {"shape": list(patch.shape), "min_side": self.min_side},
            )

    @torch.no_grad()
    def stacks(self, patches: Sequence[np.ndarray], layers: Iterable[int]) -> List[Dict[int, FeatureStack]]:
        """Feature stacks of every requested layer for each patch."""
        layers = sorted(set(layers))
        results: List[Dict[int, FeatureStack]] = [dict() for _ in patches]
        by_shape: Dict[tuple, List[int]] = defaultdict(list)
        for index, patch in enumerate(patches):
            patch = np.asarray(patch)
            self._check(patch)
            by_shape[patch.shape].append(index)

        for shape, indices in by_shape.items():
            for start in range(0, len(indices), self.batch_size):
                chunk = indices[start:start + self.batch_size]
                batch = np.stack([np.asarray(patches[i], dtype=np.float32) for i in chunk])[:, None]
                if not self.weights.invert_ink:
                    # network saw bright ink on dark during training
                    batch = 1.0 - batch
                outputs = self.net.feature_maps(torch.from_numpy(batch), layers)
                for layer, tensor in outputs.items():
                    maps = tensor.numpy().astype(np.float64)
                    for row, index in enumerate(chunk):
                        results[index][layer] = FeatureStack(layer=layer, maps=maps[row])
        return results

    def fragment_stacks(self, fragments: Sequence[Fragment], layers: Iterable[int]) -> List[Dict[int, FeatureStack]]:
        return self.stacks([f.patch.data for f in fragments], layers)


def forward(frag: Fragment, weights: NetWeights, upto_layer: int, min_side: int = 17) -> FeatureStack:
    """Post-ReLU, post-batch-norm maps of block ``upto_layer`` for one fragment."""
    extractor = FeatureExtractor(weights, min_side=min_side)
    return extractor.fragment_stacks([frag], [upto_layer])[0][upto_layer]
