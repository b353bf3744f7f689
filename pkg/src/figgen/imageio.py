"""Image I/O and layout helpers.

Arrays at package boundaries are HxWx3 float32 in [0, 1]; torch modules
work on BxCxHxW tensors. PNG files are 8-bit RGB.
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """HxWx3 [0,1] array -> 1x3xHxW float tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image)).to(torch.float32).permute(2, 0, 1).unsqueeze(0)


def batch_to_tensor(images) -> torch.Tensor:
    """Sequence of HxWx3 arrays (same shape) -> Bx3xHxW tensor."""
    return torch.cat([to_tensor(im) for im in images], dim=0)


def to_array(tensor: torch.Tensor) -> np.ndarray:
    """3xHxW or 1x3xHxW tensor -> HxWx3 float32 array clamped to [0,1]."""
    if tensor.ndim == 4:
        if tensor.shape[0] != 1:
            raise ValueError("pass a single image, not a batch")
        tensor = tensor[0]
    return tensor.detach().clamp(0.0, 1.0).permute(1, 2, 0).to(torch.float32).cpu().numpy()


def save_png(path, image: np.ndarray) -> None:
    """Write an HxWx3 [0,1] array as 8-bit RGB PNG."""
    quantized = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(Path(path), format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG as HxWx3 float32 in [0,1] (converted to RGB)."""
    with Image.open(Path(path)) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def make_grid(rows, gutter: int = 4) -> np.ndarray:
    """Tile images row-major into one canvas with white gutters.

    `rows` is a list of lists of equally shaped HxWx3 arrays; ragged rows
    are padded with white cells.
    """
    if not rows or not any(rows):
        raise ValueError("grid needs at least one image")
    cells = [im for row in rows for im in row]
    h, w, _ = cells[0].shape
    for im in cells:
        if im.shape != (h, w, 3):
            raise ValueError("all grid cells must share one shape")
    n_cols = max(len(row) for row in rows)
    n_rows = len(rows)
    canvas = np.ones(
        (n_rows * h + (n_rows - 1) * gutter, n_cols * w + (n_cols - 1) * gutter, 3),
        dtype=np.float32,
    )
    for r, row in enumerate(rows):
        for c, im in enumerate(row):
            top = r * (h + gutter)
            left = c * (w + gutter)
            canvas[top : top + h, left : left + w] = im
    return canvas
