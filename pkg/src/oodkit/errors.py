"""Exception taxonomy for the toolkit.

Every error raised by oodkit derives from OodkitError so callers (and the
CLI's machine-readable error listing) can catch one base class.
"""


class OodkitError(Exception):
    """Base class for all oodkit errors."""


# ---------------------------------------------------------------- tensor IO

class BadMagic(OodkitError):
    """File is not a parseable NPY v1.0 file (magic/version/header)."""


class UnsupportedDtype(OodkitError):
    """NPY descr is not little-endian float32 or float64."""


class FortranOrderUnsupported(OodkitError):
    """NPY file declares fortran_order=True; only C order is accepted."""


class TruncatedPayload(OodkitError):
    """Payload length does not match the header-declared shape."""


class NonFiniteValue(OodkitError):
    """Tensor contains NaN/Inf and finite validation was requested."""


class InvalidShape(OodkitError):
    """Tensor rank or dimensions outside the supported range (1..5, all >= 1)."""


# ----------------------------------------------------------------- manifests

class DuplicateId(OodkitError):
    """Two manifest rows share an id."""


class MissingColumn(OodkitError):
    """Manifest header lacks a required column."""


class BadValue(OodkitError):
    """A field value violates its range or enum constraint."""


# ----------------------------------------------------------------- reduction

class WindowTooLarge(OodkitError):
    """Pooling kernel exceeds a spatial axis length."""


class RankTooLow(OodkitError):
    """Tensor has too few axes for the requested operation."""


class ShapeMismatch(OodkitError):
    """Operands disagree in shape or flattened length."""


class TooFewSamples(OodkitError):
    """Not enough samples to fit the model."""


class NTooLarge(OodkitError):
    """Requested component count outside 1..min(N-1, d)."""


# ----------------------------------------------------------------- detectors

class SingularEvenWithJitter(OodkitError):
    """Covariance not invertible at any jitter level."""


class NonFiniteInput(OodkitError):
    """Input vector(s) contain NaN/Inf."""


class DimensionMismatch(OodkitError):
    """Query vector length differs from the fitted dimension."""


class KTooLarge(OodkitError):
    """k outside 1..N for the given training set."""


# ---------------------------------------------------------------- segmetrics

class EmptyMask(OodkitError):
    """Surface-distance metric requested on an empty mask."""


class SpacingMismatch(OodkitError):
    """Masks carry different voxel spacings."""


# ---------------------------------------------------------------- evaluation

class NoImages(OodkitError):
    """No scored images supplied."""


class DegenerateLabels(OodkitError):
    """Both a positive and a negative example are required."""


class NoPositives(OodkitError):
    """Precision-recall analysis requires at least one positive."""


class ZeroVariance(OodkitError):
    """Correlation/test undefined for constant input."""


class TooFewPoints(OodkitError):
    """Not enough paired observations."""


class LengthMismatch(OodkitError):
    """Paired sequences differ in length."""


class EverythingRejected(OodkitError):
    """Rejection threshold removed every image."""


# ----------------------------------------------------------------------- CLI

class MissingPair(OodkitError):
    """Prediction file has no ground-truth counterpart (or vice versa)."""


class ConfigError(OodkitError):
    """Run configuration is malformed."""
