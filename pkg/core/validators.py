"""Cross-section validation of configs and artifacts."""

from typing import List

from core.config import PipelineConfig
from core.exceptions import DigestMismatch, ValidationError, WriterSetMismatch
from core.logger import setup_logger

logger = setup_logger("validators")


class ConfigValidator:
    """Checks that span several config sections."""

    @classmethod
    def validate(cls, config: PipelineConfig) -> PipelineConfig:
        """Validate a complete pipeline config."""
        logger.debug(f"Validating config {config.digest()[:12]}")

        cls._validate_layers(config)
        cls._validate_fragment_size(config)

        return config

    @classmethod
    def _validate_layers(cls, config: PipelineConfig):
        """Every modelled layer needs HOG parameters."""
        for layer in config.modelled_layers():
            if layer not in config.hog.layers:
                raise ValidationError(
                    f"No HOG parameters for modelled layer {layer}",
                    {"layer": layer, "configured": sorted(config.hog.layers)},
                )

    @classmethod
    def _validate_fragment_size(cls, config: PipelineConfig):
        """The smallest fragment must still fill the HOG grid at every modelled layer."""
        side = config.fragments.min_side
        for layer in config.modelled_layers():
            params = config.hog.for_layer(layer)
            out = config.conv.output_size(side, layer)
            if out < max(params.m, params.n):
                raise ValidationError(
                    f"min_side {side} gives {out}x{out} maps at conv{layer}, "
                    f"smaller than the {params.m}x{params.n} HOG grid",
                    {"layer": layer, "map_side": out},
                )

    @classmethod
    def validate_synthetic(cls, config: PipelineConfig) -> PipelineConfig:
        """Synthetic pages must tile each writer's words; checked only when a corpus is synthesized."""
        synth = config.synthetic
        if synth.words_per_writer % synth.words_per_page:
            raise ValidationError(
                f"words_per_writer ({synth.words_per_writer}) is not a multiple "
                f"of words_per_page ({synth.words_per_page})"
            )
        pages = synth.words_per_writer // synth.words_per_page
        if synth.test_pages >= pages:
            raise ValidationError(f"{synth.test_pages} test pages leave no training page out of {pages}")
        return config


class ArtifactValidator:
    """Provenance checks between artifacts."""

    @classmethod
    def check_digest(cls, expected: str, found: str, artifact: str, force: bool = False) -> bool:
        """Compare config digests; raise unless forced."""
        if expected == found:
            return True
        if force:
            logger.warning(f"⚠️ {artifact} was built with config {found[:12]}, current is {expected[:12]} (forced)")
            return False
        raise DigestMismatch(
            f"{artifact} was built with a different config (use --force to override)",
            {"artifact": artifact, "expected": expected, "found": found},
        )

    @classmethod
    def check_writers(cls, expected: List[str], found: List[str], artifact: str):
        """Every artifact covering writers must list the same roster."""
        if list(expected) != list(found):
            raise WriterSetMismatch(
                f"{artifact} covers a different writer set",
                {"expected": list(expected), "found": list(found)},
            )
