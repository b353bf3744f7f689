"""Procedural figure-like corpus for desk-scale runs.

Four figure families (block diagrams, line plots, bar charts, scatter
plots) drawn with PIL so every pixel value is a multiple of 1/255 and the
PNG round trip is exact. Captions are templated per family, so the template
class is recoverable from the image (block diagrams carry filled boxes,
plots carry thin strokes).
"""

from typing import List

import numpy as np
from PIL import Image, ImageDraw

from figgen.corpus.records import FigureRecord
from figgen.seeding import step_rng

CAPTION_TEMPLATES = ("block diagram", "line plot", "bar chart", "scatter plot")

INK = (20, 20, 20)
BOX_FILL = (120, 120, 130)
ACCENTS = ((30, 60, 140), (150, 40, 40), (30, 110, 60))


def _axes(draw: ImageDraw.ImageDraw, w: int, h: int) -> tuple:
    """Draw an L-shaped axis frame with tick marks; return the plot box."""
    x0, y0 = int(0.12 * w), int(0.08 * h)
    x1, y1 = int(0.95 * w), int(0.88 * h)
    draw.line([(x0, y0), (x0, y1)], fill=INK, width=2)
    draw.line([(x0, y1), (x1, y1)], fill=INK, width=2)
    for i in range(1, 5):
        tx = x0 + i * (x1 - x0) // 5
        ty = y0 + i * (y1 - y0) // 5
        draw.line([(tx, y1), (tx, y1 + 4)], fill=INK, width=1)
        draw.line([(x0 - 4, ty), (x0, ty)], fill=INK, width=1)
    return x0, y0, x1, y1


def _glyph_strokes(draw, rng, x0, y0, x1, y1) -> None:
    """Short horizontal squiggles; stand-ins for rendered text."""
    rows = rng.integers(1, 3)
    for r in range(rows):
        y = y0 + (r + 1) * (y1 - y0) // (rows + 1)
        x = x0 + 3
        while x < x1 - 6:
            seg = int(rng.integers(3, 8))
            draw.line([(x, y), (min(x + seg, x1 - 3), y)], fill=INK, width=1)
            x += seg + 3


def _draw_block_diagram(draw, rng, w, h) -> str:
    k = int(rng.integers(2, 6))
    margin = int(0.06 * w)
    gap = int(0.04 * w)
    box_w = (w - 2 * margin - (k - 1) * gap) // k
    box_h = int(rng.uniform(0.25, 0.45) * h)
    top = (h - box_h) // 2
    for i in range(k):
        left = margin + i * (box_w + gap)
        draw.rectangle([left, top, left + box_w, top + box_h], fill=BOX_FILL, outline=INK, width=2)
        _glyph_strokes(draw, rng, left, top, left + box_w, top + box_h)
        if i > 0:
            ax0 = left - gap
            ay = top + box_h // 2
            draw.line([(ax0, ay), (left, ay)], fill=INK, width=2)
            draw.polygon([(left, ay), (left - 5, ay - 4), (left - 5, ay + 4)], fill=INK)
    return f"architecture diagram with {k} blocks connected by arrows"


def _draw_line_plot(draw, rng, w, h) -> str:
    x0, y0, x1, y1 = _axes(draw, w, h)
    m = int(rng.integers(1, 4))
    trend = "rising" if rng.random() < 0.5 else "falling"
    n_pts = 12
    for c in range(m):
        xs = np.linspace(x0 + 4, x1 - 4, n_pts)
        base = np.linspace(0.15, 0.85, n_pts)
        if trend == "falling":
            base = base[::-1]
        wobble = rng.uniform(-0.08, 0.08, n_pts) + c * 0.04
        ys = y1 - (base + wobble).clip(0.02, 0.98) * (y1 - y0)
        pts = list(zip(xs.astype(int).tolist(), ys.astype(int).tolist()))
        draw.line(pts, fill=ACCENTS[c % len(ACCENTS)], width=2)
    return f"line plot of {m} curves with a {trend} trend"


def _draw_bar_chart(draw, rng, w, h) -> str:
    x0, y0, x1, y1 = _axes(draw, w, h)
    k = int(rng.integers(3, 7))
    slot = (x1 - x0) // k
    for i in range(k):
        height = rng.uniform(0.15, 0.95)
        left = x0 + i * slot + slot // 5
        right = x0 + (i + 1) * slot - slot // 5
        top = int(y1 - height * (y1 - y0))
        draw.rectangle([left, top, right, y1 - 1], fill=(90, 90, 100), outline=INK, width=1)
    return f"bar chart comparing {k} categories"


def _draw_scatter_plot(draw, rng, w, h) -> str:
    x0, y0, x1, y1 = _axes(draw, w, h)
    n = int(rng.integers(15, 41))
    direction = "positive" if rng.random() < 0.5 else "negative"
    for _ in range(n):
        fx = rng.uniform(0.05, 0.95)
        noise = rng.uniform(-0.18, 0.18)
        fy = fx + noise if direction == "positive" else 1.0 - fx + noise
        px = int(x0 + fx * (x1 - x0))
        py = int(y1 - min(max(fy, 0.03), 0.97) * (y1 - y0))
        r = 2
        draw.ellipse([px - r, py - r, px + r, py + r], fill=ACCENTS[1])
    return f"scatter plot of {n} points with {direction} correlation"


_DRAWERS = {
    "block diagram": _draw_block_diagram,
    "line plot": _draw_line_plot,
    "bar chart": _draw_bar_chart,
    "scatter plot": _draw_scatter_plot,
}


def synthesize_record(index: int, seed: int) -> FigureRecord:
    """One deterministic synthetic record; family cycles with the index."""
    rng = step_rng(seed, index, "synthetic-corpus")
    family = CAPTION_TEMPLATES[index % len(CAPTION_TEMPLATES)]
    w = int(rng.integers(128, 257))
    ratio = rng.uniform(0.6, 1.8)
    h = int(np.clip(round(w / ratio), 96, 384))
    img = Image.new("RGB", (w, h), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    caption = _DRAWERS[family](draw, rng, w, h)
    image = np.asarray(img, dtype=np.float32) / 255.0
    return FigureRecord(
        id=f"syn-{seed}-{index:05d}",
        image=image,
        caption=caption,
        source_width=w,
        source_height=h,
    )


def synthesize_corpus(n: int, seed: int) -> List[FigureRecord]:
    """n procedurally drawn figure records, byte-identical per (n, seed)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [synthesize_record(i, seed) for i in range(n)]
