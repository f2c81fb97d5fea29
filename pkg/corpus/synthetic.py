"""Deterministic synthetic handwriting corpus composed from EMNIST glyphs.

Each writer gets a style (slant, stroke thickness, glyph scale jitter,
baseline wobble) and a private set of glyph exemplars per letter. Words are
3 to 7 glyphs laid out left to right on a white canvas, then sheared.
"""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from scipy import ndimage

from core.config import SyntheticConfig
from core.exceptions import InsufficientGlyphs
from core.logger import setup_logger
from corpus.emnist import NUM_LETTERS, LabeledImages
from corpus.manifest import WordCorpus, WordEntry, load_corpus, write_manifest
from imaging.raster import GrayImage, save_png

logger = setup_logger("corpus")

INK_THRESHOLD = 0.05
GLYPH_GAP = 1


@dataclass(frozen=True)
class SyntheticStyle:
    writer: str
    slant_deg: float
    thickness: int
    scale_jitter: float
    baseline_amplitude: float
    baseline_period: float
    baseline_phase: float
    glyph_seed: int

    def vector(self) -> np.ndarray:
        return np.array([self.slant_deg, self.thickness, self.scale_jitter,
                         self.baseline_amplitude, self.baseline_period, self.baseline_phase])

    def distance(self, other: "SyntheticStyle") -> float:
        return float(np.linalg.norm(self.vector() - other.vector()))


def writer_id(index: int, prefix: str = "w") -> str:
    return f"{prefix}{index + 1:02d}"


def writer_styles(num_writers: int, config: SyntheticConfig, seed: int, prefix: str = "w") -> List[SyntheticStyle]:
    """Distinct styles; slants are evenly spread over the allowed range in seeded order."""
    rng = np.random.default_rng(seed)
    slants = rng.permutation(np.linspace(-config.max_slant_deg, config.max_slant_deg, num_writers))
    styles = []
    for i in range(num_writers):
        styles.append(SyntheticStyle(
            writer=writer_id(i, prefix),
            slant_deg=float(slants[i]),
            thickness=int(rng.integers(0, config.max_thickness + 1)),
            scale_jitter=float(rng.uniform(0.0, config.max_scale_jitter)),
            baseline_amplitude=float(rng.uniform(0.0, config.max_baseline_amplitude)),
            baseline_period=float(rng.uniform(30.0, 60.0)),
            baseline_phase=float(rng.uniform(0.0, 2 * math.pi)),
            glyph_seed=int(rng.integers(0, 2**31 - 1)),
        ))
    return styles


def letter_pools(glyphs: LabeledImages, per_letter: int) -> Dict[int, np.ndarray]:
    """Sample indices per letter class that has at least ``per_letter`` glyphs."""
    pools = {}
    for letter in range(NUM_LETTERS):
        indices = np.flatnonzero(glyphs.labels == letter)
        if len(indices) >= per_letter:
            pools[letter] = indices
    if not pools:
        raise InsufficientGlyphs(
            f"No letter class has {per_letter} glyphs to draw writer exemplars from",
            {"samples": len(glyphs), "per_letter": per_letter},
        )
    if len(pools) < NUM_LETTERS:
        logger.warning(f"⚠️ Only {len(pools)} of {NUM_LETTERS} letters have enough glyphs")
    return pools


def writer_exemplars(pools: Dict[int, np.ndarray], per_letter: int, seed: int) -> Dict[int, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {letter: rng.choice(indices, size=per_letter, replace=False) for letter, indices in pools.items()}


def _prepare_glyph(glyph: np.ndarray, style: SyntheticStyle, rng: np.random.Generator) -> np.ndarray:
    cols = np.flatnonzero(glyph.max(axis=0) > INK_THRESHOLD)
    if cols.size:
        glyph = glyph[:, cols[0]:cols[-1] + 1]
    scale = 1.0 + rng.uniform(-style.scale_jitter, style.scale_jitter)
    glyph = np.clip(ndimage.zoom(glyph, scale, order=1), 0.0, 1.0)
    if style.thickness > 0:
        glyph = ndimage.grey_dilation(glyph, size=(style.thickness + 1, style.thickness + 1))
    return glyph


def shear(ink: np.ndarray, slant_deg: float) -> np.ndarray:
    """Lean ink to the right by ``slant_deg`` about the middle row."""
    k = math.tan(math.radians(slant_deg))
    rc = (ink.shape[0] - 1) / 2.0
    return ndimage.affine_transform(ink, np.array([[1.0, 0.0], [k, 1.0]]), offset=(0.0, -k * rc),
                                    order=1, mode="constant", cval=0.0)


def render_word(glyphs: List[np.ndarray], style: SyntheticStyle, config: SyntheticConfig,
                rng: np.random.Generator) -> GrayImage:
    """Compose bright-ink glyphs into a dark-ink-on-white word image in [0, 1]."""
    height = config.canvas_height
    prepared = [_prepare_glyph(g, style, rng) for g in glyphs]
    pad = int(math.ceil(abs(math.tan(math.radians(style.slant_deg))) * height / 2)) + 1
    width = 2 * (config.margin + pad) + sum(g.shape[1] for g in prepared) + GLYPH_GAP * (len(prepared) - 1)
    ink = np.zeros((height, width))
    x = config.margin + pad
    for g in prepared:
        gh, gw = g.shape
        gh, g = min(gh, height), g[:height]
        wobble = style.baseline_amplitude * math.sin(2 * math.pi * (x + gw / 2) / style.baseline_period
                                                     + style.baseline_phase)
        top = int(np.clip((height - gh) // 2 + round(wobble), 0, height - gh))
        region = ink[top:top + gh, x:x + gw]
        np.maximum(region, g, out=region)
        x += gw + GLYPH_GAP
    ink = np.clip(shear(ink, style.slant_deg), 0.0, 1.0)
    return GrayImage(1.0 - ink)


def estimate_slant(img: GrayImage) -> float:
    """Slant in degrees from second-order ink moments (positive leans right)."""
    ink = np.clip(1.0 - img.data, 0.0, None)
    total = ink.sum()
    if total <= 0:
        return 0.0
    rows, cols = np.indices(ink.shape)
    y_bar = (rows * ink).sum() / total
    x_bar = (cols * ink).sum() / total
    mu11 = ((cols - x_bar) * (rows - y_bar) * ink).sum()
    mu02 = (((rows - y_bar) ** 2) * ink).sum()
    if mu02 <= 0:
        return 0.0
    return math.degrees(math.atan(-mu11 / mu02))


def generate_synthetic_corpus(
    glyphs: LabeledImages,
    out_dir: Union[str, Path],
    config: Optional[SyntheticConfig] = None,
    seed: int = 0,
    num_writers: Optional[int] = None,
    words_per_writer: Optional[int] = None,
    calibration: bool = False,
    prefix: str = "w",
) -> WordCorpus:
    """Write writer/page/word PNGs plus ``manifest.csv`` under ``out_dir``.

    ``glyphs`` are EMNIST letters as loaded (bright ink). The last
    ``test_pages`` pages of every writer form the test split; a calibration
    corpus keeps every word in the train split.
    """
    config = config or SyntheticConfig()
    num_writers = num_writers or config.num_writers
    words_per_writer = words_per_writer or config.words_per_writer
    if num_writers < 2:
        raise InsufficientGlyphs("A synthetic corpus needs at least two writers")
    out_dir = Path(out_dir)
    pools = letter_pools(glyphs, config.exemplars_per_letter)
    letters = sorted(pools)
    styles = writer_styles(num_writers, config, seed, prefix)
    streams = np.random.SeedSequence(seed).spawn(num_writers)
    pages = max(1, words_per_writer // config.words_per_page)
    test_from = pages - min(config.test_pages, pages - 1)

    entries: List[WordEntry] = []
    for style, stream in zip(styles, streams):
        rng = np.random.default_rng(stream)
        exemplars = writer_exemplars(pools, config.exemplars_per_letter, style.glyph_seed)
        for w in range(words_per_writer):
            page = min(w // config.words_per_page, pages - 1)
            length = int(rng.integers(config.min_letters, config.max_letters + 1))
            word = [letters[int(i)] for i in rng.integers(0, len(letters), size=length)]
            chosen = [glyphs.images[int(rng.choice(exemplars[letter]))] for letter in word]
            img = render_word(chosen, style, config, rng)
            page_id = f"{style.writer}-p{page + 1:02d}"
            path = out_dir / style.writer / f"page_{page + 1:02d}" / f"word_{w + 1:03d}.png"
            save_png(img, path)
            split = "test" if page >= test_from and not calibration else "train"
            entries.append(WordEntry(style.writer, page_id, split, path))

    manifest = write_manifest(WordCorpus(entries), out_dir / "manifest.csv")
    logger.info(f"✍️ Wrote {len(entries)} synthetic words for {num_writers} writers to {out_dir}")
    return load_corpus(manifest, require_test=not calibration)
