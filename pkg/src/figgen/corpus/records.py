"""Figure records, the aspect-ratio filter, and white-padding normalization."""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import torch
import torch.nn.functional as F


@dataclass
class FigureRecord:
    """One figure-caption pair as ingested, before any preprocessing.

    `image` is HxWx3 float in [0,1]; `source_width`/`source_height` are the
    original pixel dimensions (width = number of columns).
    """

    id: str
    image: np.ndarray
    caption: str
    source_width: int
    source_height: int

    def validate(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"record {self.id}: image must be HxWx3, got {self.image.shape}")
        h, w = self.image.shape[:2]
        if h < 1 or w < 1:
            raise ValueError(f"record {self.id}: empty image")
        if (h, w) != (self.source_height, self.source_width):
            raise ValueError(
                f"record {self.id}: image shape {(h, w)} does not match "
                f"declared size {(self.source_height, self.source_width)}"
            )
        lo, hi = float(self.image.min()), float(self.image.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"record {self.id}: pixel values outside [0,1] ({lo}, {hi})")
        if not self.caption.strip():
            raise ValueError(f"record {self.id}: empty caption")

    @property
    def aspect_ratio(self) -> float:
        return self.source_width / self.source_height


@dataclass
class PreparedSample:
    """A training-ready sample: square padded image plus tokenized caption."""

    id: str
    image: np.ndarray  # SxSx3 float32 in [0,1]
    token_ids: List[int]  # length L_max, BOS-led, PAD-extended
    pad_mask: List[bool] = field(default_factory=list)  # True exactly on non-PAD


def aspect_ratio_filter(
    records: Sequence[FigureRecord], lo: float = 0.5, hi: float = 2.0
) -> List[FigureRecord]:
    """Keep records with lo <= width/height <= hi (inclusive), order preserved."""
    if lo <= 0:
        raise ValueError(f"lo must be positive, got {lo}")
    if hi < lo:
        raise ValueError(f"hi ({hi}) must be >= lo ({lo})")
    return [r for r in records if lo <= r.aspect_ratio <= hi]


def pad_to_square(image: np.ndarray) -> np.ndarray:
    """Center the image on a max(H,W)-sided white (1.0) canvas."""
    h, w = image.shape[:2]
    side = max(h, w)
    canvas = np.ones((side, side, 3), dtype=np.float32)
    top = (side - h) // 2
    left = (side - w) // 2
    canvas[top : top + h, left : left + w] = image
    return canvas


def resize_bilinear(image: np.ndarray, target: int) -> np.ndarray:
    """Antialiased bilinear resize of an HxWx3 array to target x target."""
    x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
    x = x.permute(2, 0, 1).unsqueeze(0)
    y = F.interpolate(x, size=(target, target), mode="bilinear", antialias=True, align_corners=False)
    return y[0].permute(1, 2, 0).clamp(0.0, 1.0).numpy()


def pad_and_resize(record: FigureRecord, target: int) -> np.ndarray:
    """White-pad a record's image to square, then resize to target x target."""
    if target <= 0:
        raise ValueError(f"target must be positive, got {target}")
    record.validate()
    return resize_bilinear(pad_to_square(record.image), target)
