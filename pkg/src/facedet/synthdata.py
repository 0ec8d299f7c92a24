"""Seeded synthetic scenes: bright axis-aligned squares ("faces") on dark
noise, with exact ground-truth boxes.

The three side lengths span the anchor ranges of the three detection
heads at the toy input scale, so small squares can only be claimed by
the stride-8 head, medium ones by stride 16 and large ones by stride 32.
Some scenes also carry bright elongated bars. Bars are not annotated:
they are background clutter whose overlap with every anchor shape stays
below the negative threshold, so the heads are actively trained to
reject bright non-square mass instead of equating brightness with
"face".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

BAND_SMALL, BAND_MEDIUM, BAND_LARGE = 0, 1, 2
_BAR = 3


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 64
    image_size: int = 128
    # per-band square side lengths; the large one is a nominally 300 px
    # face scaled by 0.41 to fit the canvas
    band_sides: tuple[int, int, int] = (12, 80, 123)
    # margins keep small/medium faces clear of the border: an in-bounds
    # anchor then always sits within half a stride of a small face, and
    # border cells (whose anchors are never trained) see background only
    band_margins: tuple[int, int, int] = (6, 16, 0)
    # distractor bar dimensions (long side x short side)
    bar_size: tuple[int, int] = (100, 16)
    background_high: float = 0.12
    face_low: float = 0.75
    seed: int = 7

    def __post_init__(self):
        if self.n_images < 1:
            raise ConfigError("n_images must be >= 1")
        for side, margin in zip(self.band_sides, self.band_margins):
            if side + 2 * margin > self.image_size:
                raise ConfigError(
                    f"side {side} with margin {margin} does not fit {self.image_size}"
                )
        if not 0.0 <= self.background_high < self.face_low <= 1.0:
            raise ConfigError("need background_high < face_low within [0, 1]")


@dataclass
class SynthScene:
    image: np.ndarray   # (3, S, S) float32 in [0, 1]
    boxes: np.ndarray   # (G, 4) float64
    bands: np.ndarray   # (G,) int32


# image i carries the faces of pattern i mod 5; the empty pattern keeps
# pure-background negatives in the training stream
_PATTERNS = (
    (BAND_SMALL,),
    (BAND_MEDIUM,),
    (BAND_LARGE,),
    (BAND_SMALL, BAND_MEDIUM),
    (),
)


def _place(rng, size, side, margin, taken, gap=8, tries=100):
    lo = margin
    hi = size - side - margin
    for _ in range(tries):
        x = int(rng.integers(lo, hi + 1))
        y = int(rng.integers(lo, hi + 1))
        box = (x - gap, y - gap, x + side + gap, y + side + gap)
        if all(
            box[2] <= t[0] or t[2] <= box[0] or box[3] <= t[1] or t[3] <= box[1]
            for t in taken
        ):
            return x, y
    return None


def generate_dataset(config: SynthConfig = SynthConfig()) -> list[SynthScene]:
    rng = np.random.default_rng(config.seed)
    s = config.image_size
    scenes = []
    for i in range(config.n_images):
        image = rng.uniform(0.0, config.background_high, size=(3, s, s)).astype(np.float32)
        boxes = []
        bands = []
        taken: list[tuple[int, int, int, int]] = []
        # biggest first, or the cramped face may find no free spot
        pattern = sorted(
            _PATTERNS[i % len(_PATTERNS)], key=lambda b: -config.band_sides[b]
        )
        for band in pattern:
            side = config.band_sides[band]
            margin = config.band_margins[band]
            spot = _place(rng, s, side, margin, taken)
            if spot is None:
                continue
            x, y = spot
            color = rng.uniform(config.face_low, 1.0, size=3).astype(np.float32)
            image[:, y : y + side, x : x + side] = color[:, None, None]
            # thin darker rim keeps the square edge crisp against the fill
            rim = (color * 0.55)[:, None, None]
            image[:, y, x : x + side] = rim[:, 0]
            image[:, y + side - 1, x : x + side] = rim[:, 0]
            image[:, y : y + side, x] = rim[:, 0]
            image[:, y : y + side, x + side - 1] = rim[:, 0]
            boxes.append([x, y, x + side, y + side])
            bands.append(band)
            taken.append((x, y, x + side, y + side))
        scenes.append(
            SynthScene(
                image=image,
                boxes=np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
                bands=np.asarray(bands, dtype=np.int32),
            )
        )
    return scenes
