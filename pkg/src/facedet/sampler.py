"""Per-module hard example mining for the training mini-batch.

Out of one module's anchors, keep the positives the classifier is least
sure about (lowest face score) up to a quarter of the batch, then fill
the rest with the negatives it is most wrong about (highest face score).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .matching import MatchResult


@dataclass(frozen=True)
class OhemConfig:
    batch_per_module: int = 256
    positive_fraction: float = 0.25

    def __post_init__(self):
        if self.batch_per_module < 1:
            raise ConfigError(f"batch_per_module must be >= 1, got {self.batch_per_module}")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigError(
                f"positive_fraction must be in (0, 1), got {self.positive_fraction}"
            )


def select(face_scores: np.ndarray, match: MatchResult, config: OhemConfig) -> np.ndarray:
    """Pick the mined anchor indices for one module, sorted ascending.

    face_scores are post-softmax face probabilities aligned with the
    anchor layout. The positive quota is a ceiling: unfilled positive
    slots go to negatives, and if negatives also run short the batch is
    simply smaller. Ties break toward the lower anchor index.
    """
    scores = np.asarray(face_scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != match.num_anchors:
        raise ValueError(
            f"scores/anchors mismatch: {scores.shape[0]} vs {match.num_anchors}"
        )

    batch = config.batch_per_module
    quota = math.ceil(config.positive_fraction * batch)

    pos = match.positive_indices
    neg = match.negative_indices

    n_pos = min(quota, pos.size)
    # lexsort uses the last key as primary: score ascending, index breaks ties
    pos_order = np.lexsort((pos, scores[pos]))
    chosen_pos = pos[pos_order[:n_pos]]

    n_neg = min(batch - n_pos, neg.size)
    neg_order = np.lexsort((neg, -scores[neg]))
    chosen_neg = neg[neg_order[:n_neg]]

    return np.sort(np.concatenate([chosen_pos, chosen_neg]))
