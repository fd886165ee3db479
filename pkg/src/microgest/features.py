"""Images, normalization, rolling statistics, and classifier feature vectors.

The sensor is a small photodiode array (3x3 in the reference hardware) read
by a 10-bit ADC, so raw pixels are integers in 0..1023.  Normalization
divides by 1024: a power of two that the target reaches by exponent
arithmetic alone, at the price of never producing exactly 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams, PixelOutOfRange, ShapeMismatch

ADC_MAX = 1023
NORM_DIVISOR = 1024.0


@dataclass
class Image:
    """One frame: ``pixels`` has shape ``(height, width)``, values 0..1023."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels)
        if self.pixels.shape != (self.height, self.width):
            raise ShapeMismatch(
                f"pixels shape {self.pixels.shape}, expected "
                f"({self.height}, {self.width})"
            )
        if self.pixels.size and (
            np.min(self.pixels) < 0 or np.max(self.pixels) > ADC_MAX
        ):
            raise PixelOutOfRange("pixel values must lie in 0..1023")


def normalize(image: Image) -> np.ndarray:
    """Flatten row-major and scale to ``[0, 1)`` by dividing by 1024."""
    return image.pixels.astype(float).ravel() / NORM_DIVISOR


def normalize_frames(frames: np.ndarray) -> np.ndarray:
    """Vector version of :func:`normalize` for a ``(T, H, W)`` frame stack."""
    frames = np.asarray(frames)
    return frames.astype(float).reshape(frames.shape[0], -1) / NORM_DIVISOR


@dataclass
class RollingStats:
    """Per-pixel exponential average plus decaying min/max envelopes.

    All three tracks live in the normalized domain.  With decay ``alpha``
    close to one the average follows slow illumination drift, while the
    min/max envelopes latch short excursions and then relax back toward the
    average.  The update for sample ``s`` is::

        avg'  = alpha * avg + (1 - alpha) * s
        min'  = min(s, alpha * min + (1 - alpha) * avg)
        max'  = max(s, alpha * max + (1 - alpha) * avg)

    where ``avg`` on the right-hand side is the value from before the
    update.  The first sample initializes all three tracks.  A stats object
    is stream-local with a single writer; replaying the same stream into a
    fresh object reproduces identical values.
    """

    alpha: float = 0.99
    avg: np.ndarray | None = field(default=None)
    min: np.ndarray | None = field(default=None)
    max: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise InvalidParams(f"alpha must be in (0, 1), got {self.alpha}")

    @property
    def initialized(self) -> bool:
        return self.avg is not None


def update_rolling(stats: RollingStats, image: Image) -> RollingStats:
    """Feed one image into the rolling statistics (in place, also returned)."""
    s = normalize(image)
    if stats.avg is None:
        stats.avg = s.copy()
        stats.min = s.copy()
        stats.max = s.copy()
        return stats
    a = stats.alpha
    avg_prev = stats.avg
    stats.min = np.minimum(s, a * stats.min + (1.0 - a) * avg_prev)
    stats.max = np.maximum(s, a * stats.max + (1.0 - a) * avg_prev)
    stats.avg = a * avg_prev + (1.0 - a) * s
    return stats


def build_features(image: Image, stats: RollingStats | None = None) -> np.ndarray:
    """Feature vector for one frame.

    Without ``stats`` this is just the normalized pixels.  With ``stats``
    (already updated through the current image) three image-level aggregates
    are appended: the mean of the per-pixel rolling averages, of the rolling
    minima, and of the rolling maxima.  For a 3x3 sensor that yields the
    12-feature layout used by the recurrent models.
    """
    base = normalize(image)
    if stats is None:
        return base
    if not stats.initialized:
        raise InvalidParams("rolling stats must be updated before building features")
    extras = np.array(
        [float(np.mean(stats.avg)), float(np.mean(stats.min)), float(np.mean(stats.max))]
    )
    return np.concatenate([base, extras])


# --- annotated frame streams -------------------------------------------------

LABEL_KIND_GESTURE = "gesture"
LABEL_KIND_PHASE = "phase"


@dataclass(frozen=True)
class Annotation:
    """A label attached to one frame of a stream."""

    frame: int
    label: int


@dataclass
class AnnotatedSequence:
    """A frame stream plus sparse or per-frame labels.

    ``frames`` has shape ``(T, height, width)`` with ADC-range values.
    ``label_kind`` says how annotation labels are meant: ``"gesture"``
    labels name a gesture class at its final frame, ``"phase"`` labels give
    the motion-phase state of that frame.
    """

    width: int
    height: int
    frames: np.ndarray
    annotations: list[Annotation] = field(default_factory=list)
    label_kind: str = LABEL_KIND_GESTURE
    fps: float = 40.0

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (self.height, self.width):
            raise ShapeMismatch(
                f"frames shape {self.frames.shape}, expected "
                f"(T, {self.height}, {self.width})"
            )
        if self.label_kind not in (LABEL_KIND_GESTURE, LABEL_KIND_PHASE):
            raise InvalidParams(f"unknown label kind {self.label_kind!r}")

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def image(self, t: int) -> Image:
        return Image(self.width, self.height, self.frames[t])

    def check(self) -> None:
        """Validate pixel range and annotation frame indices."""
        if len(self) and (
            int(self.frames.min()) < 0 or int(self.frames.max()) > ADC_MAX
        ):
            raise PixelOutOfRange("frame values must lie in 0..1023")
        for ann in self.annotations:
            if not (0 <= ann.frame < len(self)):
                raise InvalidParams(
                    f"annotation frame {ann.frame} outside stream of {len(self)}"
                )
