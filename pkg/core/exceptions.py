"""Custom exceptions for the writer identification pipeline."""

from typing import Optional, Dict, Any


class WriterIdError(Exception):
    """Base exception for the writer identification pipeline."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ConfigurationError(WriterIdError):
    """Raised when configuration is invalid or missing."""
    exit_code = 2


class ValidationError(ConfigurationError):
    """Raised when parameters fail cross-section validation."""
    pass


class DataError(WriterIdError):
    """Raised when input data cannot be read or violates its format."""
    exit_code = 3


class MissingFile(DataError):
    """Raised when an input file does not exist."""
    pass


class UnsupportedFormat(DataError):
    """Raised when an image is not an 8-bit gray or RGB PNG/PGM."""
    pass


class CorruptImage(DataError):
    """Raised when an image file cannot be decoded."""
    pass


class ImageTooSmall(DataError):
    """Raised when an image is too small for the scale space."""
    pass


class BadMagic(DataError):
    """Raised when a binary file starts with an unexpected magic number."""
    pass


class CountMismatch(DataError):
    """Raised when image and label files disagree on the sample count."""
    pass


class TruncatedFile(DataError):
    """Raised when a binary file ends before its declared payload."""
    pass


class EmptyDataset(DataError):
    """Raised when a training set has no samples."""
    pass


class LabelOutOfRange(DataError):
    """Raised when a class label falls outside the network head."""
    pass


class MissingImage(DataError):
    """Raised when a manifest row points to a missing word image."""
    pass


class WriterWithoutTest(DataError):
    """Raised when a writer has no test words after splitting."""
    pass


class DuplicateRow(DataError):
    """Raised when a manifest lists the same word twice."""
    pass


class EmptyManifest(DataError):
    """Raised when a manifest has no rows."""
    pass


class InsufficientGlyphs(DataError):
    """Raised when a letter class has too few glyphs for synthesis."""
    pass


class ManifestError(DataError):
    """Raised when a manifest has a bad header or an unknown split."""
    pass


class ModelError(WriterIdError):
    """Raised when a model artifact or numerical stage fails."""
    exit_code = 4


class ShapeError(ModelError):
    """Raised when an input is smaller than the network accepts."""
    pass


class WeightMismatch(ModelError):
    """Raised when stored tensors do not fit the network spec."""
    pass


class FormatVersionMismatch(ModelError):
    """Raised when a container has an unknown magic or version."""
    pass


class ChecksumMismatch(ModelError):
    """Raised when a container's CRC32 trailer does not match."""
    pass


class DigestMismatch(ModelError):
    """Raised when artifacts were built from different configs."""
    pass


class MapTooSmall(ModelError):
    """Raised when a feature map is smaller than the HOG grid."""
    pass


class RankDeficient(ModelError):
    """Raised when a matrix has fewer nonzero singular values than components."""
    pass


class NoConvergence(ModelError):
    """Raised when an iterative solver exhausts its iterations."""
    pass


class DimMismatch(ModelError):
    """Raised when matrix dimensions do not agree."""
    pass


class EmptyStack(ModelError):
    """Raised when pooling receives no feature maps."""
    pass


class ProfileMismatch(ModelError):
    """Raised when a saliency profile does not fit the feature stack."""
    pass


class SingleClass(ModelError):
    """Raised when one-vs-all training sees fewer than two writers."""
    pass


class DegenerateKernel(ModelError):
    """Raised when the RBF gamma is not positive."""
    pass


class EmptyGrid(ModelError):
    """Raised when a hyperparameter grid is empty."""
    pass


class NoFragments(ModelError):
    """Raised when a word yields no usable fragment scores."""
    pass


class WriterSetMismatch(ModelError):
    """Raised when score vectors cover different writers."""
    pass


class EmptyValidation(ModelError):
    """Raised when alpha selection has no validation words."""
    pass


class EmptyPage(ModelError):
    """Raised when a page has no word scores."""
    pass


class LayerNotInBundle(ModelError):
    """Raised when a model bundle lacks the models a layer mode needs."""
    pass
