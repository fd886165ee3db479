"""Exception hierarchy shared by all microgest modules.

Every error raised on purpose by this package derives from
:class:`MicrogestError`, so callers (and the CLI) can catch one type.
"""


class MicrogestError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParams(MicrogestError):
    """A configuration or argument value is outside its legal range."""


# --- model structure ---------------------------------------------------------

class ShapeMismatch(MicrogestError):
    """An array or layer does not have the shape the architecture demands."""


class NonFiniteParameter(MicrogestError):
    """A weight or bias is NaN or infinite."""


class IllegalActivationPlacement(MicrogestError):
    """An activation was requested on a layer kind that cannot host it."""


# --- inference ---------------------------------------------------------------

class LayerwiseKind(MicrogestError):
    """An element-wise evaluation was requested for a layer-wise activation,
    or the other way round."""


class RangeExceeded(MicrogestError):
    """Input to the fast power-of-two approximation is outside +/-126."""


class EmptyLayer(MicrogestError):
    """A layer-wise activation received a zero-length vector."""


class RecurrentLayerPresent(MicrogestError):
    """A pure feed-forward evaluation was asked to run a recurrent model."""


# --- images and streams ------------------------------------------------------

class PixelOutOfRange(MicrogestError):
    """A pixel value lies outside the 10-bit ADC range 0..1023."""


class NonSquareImage(MicrogestError):
    """A rotation by a quarter turn needs width == height."""


class TooShort(MicrogestError):
    """A candidate has fewer than two frames and cannot be resampled."""


# --- training ----------------------------------------------------------------

class DivergenceDetected(MicrogestError):
    """Training loss became NaN or infinite."""


# --- compression -------------------------------------------------------------

class KTooLarge(MicrogestError):
    """More clusters were requested than surviving weights exist."""


class DeltaOverflow(MicrogestError):
    """A stored index delta is outside the 8-bit field (corrupt stream)."""


class CorruptStream(MicrogestError):
    """An encoded bit- or byte-stream cannot be decoded."""


# --- storage -----------------------------------------------------------------

class ChecksumMismatch(MicrogestError):
    """Stored CRC-32 does not match the file contents."""


class VersionUnsupported(MicrogestError):
    """The file was written by a newer format version."""


class Truncated(MicrogestError):
    """The file ends before the declared payload is complete."""


# --- resource estimation -----------------------------------------------------

class UnknownActivationCost(MicrogestError):
    """The cost model has no entry for an activation used by the model."""
