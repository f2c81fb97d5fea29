"""Word image -> keypoints -> fragments -> feature maps -> pooled descriptors."""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import HogConfig, PipelineConfig
from core.logger import setup_logger
from core.monitoring import MetricsCollector, metrics_collector
from convnet.features import FeatureExtractor
from convnet.network import NetWeights
from hogmap.descriptor import descriptors
from imaging.raster import GrayImage, load_grayscale, normalize01, save_png
from keypoints.detector import Keypoint, detect
from keypoints.fragments import Fragment, extract_fragments
from pooling.strategies import pool_all
from saliency.profile import SaliencyProfile

logger = setup_logger("pipeline")


@dataclass
class WordDescriptors:
    """Every fragment descriptor of one word, keyed by strategy then layer."""
    path: Path
    keypoints: int
    fragments: int
    skipped: int
    vectors: Dict[str, Dict[int, np.ndarray]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return self.fragments == 0

    def matrix(self, strategy: str, layer: int) -> np.ndarray:
        return self.vectors[strategy][layer]


class DescriptorExtractor:
    """Turns word images into pooled fragment descriptors for several strategies and layers."""

    def __init__(
        self,
        config: PipelineConfig,
        weights: NetWeights,
        profiles: Optional[Dict[int, SaliencyProfile]] = None,
        strategies: Sequence[str] = ("post",),
        layers: Optional[Iterable[int]] = None,
        hog: Optional[HogConfig] = None,
        metrics: Optional[MetricsCollector] = None,
    ):
        self.config = config
        self.features = FeatureExtractor(weights, min_side=config.fragments.min_side)
        self.profiles = profiles or {}
        self.strategies = tuple(strategies)
        self.layers = sorted(set(layers or config.modelled_layers()))
        self.hog = hog or config.hog
        self.metrics = metrics or metrics_collector

    def cut(self, path: Union[str, Path]) -> Tuple[GrayImage, List[Keypoint], List[Fragment], int]:
        img = normalize01(load_grayscale(path))
        keypoints = detect(img, self.config.sift)
        fragments, skipped = extract_fragments(img, keypoints, self.config.fragments)
        return img, keypoints, fragments, skipped

    def word(self, path: Union[str, Path]) -> WordDescriptors:
        _, keypoints, fragments, skipped = self.cut(path)
        self.metrics.increment_counter("fragments_extracted", len(fragments))
        if skipped:
            self.metrics.increment_counter("fragments_skipped", skipped)
        result = WordDescriptors(Path(path), len(keypoints), len(fragments), skipped)
        stacks = self.features.fragment_stacks(fragments, self.layers)
        for layer in self.layers:
            params = self.hog.for_layer(layer)
            profile = self.profiles.get(layer)
            rows: Dict[str, List[np.ndarray]] = {s: [] for s in self.strategies}
            for per_layer in stacks:
                pooled = pool_all(per_layer[layer], params, self.strategies, profile)
                for strategy, descriptor in pooled.items():
                    rows[strategy].append(descriptor.vector)
            for strategy in self.strategies:
                matrix = np.vstack(rows[strategy]) if rows[strategy] else np.zeros((0, params.length))
                result.vectors.setdefault(strategy, {})[layer] = matrix
        return result

    def words(self, paths: Sequence[Union[str, Path]], jobs: int = 1) -> List[WordDescriptors]:
        """Descriptors of many words, in input order."""
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = list(pool.map(self.word, paths))
        empty = sum(1 for r in results if r.empty)
        if empty:
            logger.info(f"{empty} of {len(results)} words yielded no usable fragments")
        return results

    def filter_hogs(self, path: Union[str, Path]) -> Dict[int, np.ndarray]:
        """Per-filter HOG vectors of every fragment of a word, shape (fragments, F, D) per layer."""
        _, _, fragments, _ = self.cut(path)
        stacks = self.features.fragment_stacks(fragments, self.layers)
        out: Dict[int, np.ndarray] = {}
        for layer in self.layers:
            params = self.hog.for_layer(layer)
            filters = self.features.weights.spec.blocks[layer - 1].filters
            if not stacks:
                out[layer] = np.zeros((0, filters, params.length))
            else:
                out[layer] = np.stack([descriptors(s[layer].maps, params) for s in stacks])
        return out

    def dump(self, path: Union[str, Path], out_dir: Union[str, Path]) -> Path:
        """Write keypoints, fragment PNGs and descriptor rows of one word for inspection."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _, keypoints, fragments, _ = self.cut(path)
        with (out_dir / "keypoints.csv").open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(Keypoint.__dataclass_fields__), lineterminator="\n")
            writer.writeheader()
            for kp in keypoints:
                writer.writerow(kp.to_row())
        for i, fragment in enumerate(fragments):
            save_png(fragment.patch, out_dir / "fragments" / f"fragment_{i:04d}.png")
        result = self.word(path)
        with (out_dir / "descriptors.csv").open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["strategy", "layer", "fragment", "values"])
            for strategy, per_layer in result.vectors.items():
                for layer, matrix in sorted(per_layer.items()):
                    for i, row in enumerate(matrix):
                        writer.writerow([strategy, layer, i, " ".join(f"{v:.6g}" for v in row)])
        logger.info(f"🗂️ Dumped {len(keypoints)} keypoints and {len(fragments)} fragments to {out_dir}")
        return out_dir
