"""Dataset preparation: filter, pad/resize, tokenize, split, and reload."""

import json
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import torch

from figgen import imageio
from figgen.corpus.records import FigureRecord, PreparedSample, aspect_ratio_filter, pad_and_resize
from figgen.corpus.tokenizer import (
    DEFAULT_L_MAX,
    DEFAULT_VOCAB_SIZE,
    SubwordTokenizer,
    train_tokenizer,
)
from figgen.seeding import step_rng

PREPARED_MANIFEST = "prepared.jsonl"
TOKENIZER_FILE = "tokenizer.json"
STATS_FILE = "stats.json"
TRAIN_SPLIT = "train_ids.txt"
VAL_SPLIT = "val_ids.txt"

_RATIO_BINS = ((0.0, 0.5), (0.5, 1.0), (1.0, 1.5), (1.5, 2.0), (2.0, float("inf")))


def _ratio_histogram(records: Sequence[FigureRecord]) -> Dict[str, int]:
    hist = {f"[{lo}, {hi})": 0 for lo, hi in _RATIO_BINS}
    for rec in records:
        for lo, hi in _RATIO_BINS:
            if lo <= rec.aspect_ratio < hi:
                hist[f"[{lo}, {hi})"] += 1
                break
    return hist


def prepare_dataset(
    records: Sequence[FigureRecord],
    out_dir,
    resolution: int = 512,
    vocab_size: int = DEFAULT_VOCAB_SIZE,
    l_max: int = DEFAULT_L_MAX,
    ratio_lo: float = 0.5,
    ratio_hi: float = 2.0,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> Dict:
    """Filter, normalize, and tokenize records into a training directory.

    Writes prepared PNGs, the tokenizer, seeded train/val id lists, and a
    stats JSON (kept/dropped counts and a ratio histogram). Returns the stats.
    """
    records = list(records)
    kept = aspect_ratio_filter(records, lo=ratio_lo, hi=ratio_hi)
    if not kept:
        raise ValueError("no records survive the aspect-ratio filter")

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)

    tokenizer = train_tokenizer([r.caption for r in kept], vocab_size=vocab_size, l_max=l_max)
    tokenizer.save(out_dir / TOKENIZER_FILE)

    with (out_dir / PREPARED_MANIFEST).open("w", encoding="utf-8") as fh:
        for rec in kept:
            image = pad_and_resize(rec, resolution)
            rel = f"images/{rec.id}.png"
            imageio.save_png(out_dir / rel, image)
            fh.write(json.dumps({"id": rec.id, "image": rel, "caption": rec.caption}) + "\n")

    ids = [r.id for r in kept]
    order = step_rng(seed, 0, "split").permutation(len(ids))
    n_val = int(round(val_fraction * len(ids)))
    val_ids = [ids[i] for i in sorted(order[:n_val].tolist())]
    train_ids = [ids[i] for i in sorted(order[n_val:].tolist())]
    (out_dir / TRAIN_SPLIT).write_text("\n".join(train_ids) + "\n", encoding="utf-8")
    (out_dir / VAL_SPLIT).write_text("\n".join(val_ids) + "\n", encoding="utf-8")

    stats = {
        "input": len(records),
        "kept": len(kept),
        "dropped": len(records) - len(kept),
        "ratio_histogram": _ratio_histogram(records),
        "resolution": resolution,
        "vocab_size": tokenizer.vocab_size,
        "l_max": l_max,
        "train": len(train_ids),
        "val": len(val_ids),
        "seed": seed,
    }
    (out_dir / STATS_FILE).write_text(json.dumps(stats, indent=2), encoding="utf-8")
    return stats


class PreparedDataset:
    """Random access over a prepared directory; images cached in memory."""

    def __init__(self, root, split: str | None = None):
        self.root = Path(root)
        manifest = self.root / PREPARED_MANIFEST
        if not manifest.is_file():
            raise FileNotFoundError(f"not a prepared dataset (missing {PREPARED_MANIFEST}): {root}")
        self.tokenizer = SubwordTokenizer.load(self.root / TOKENIZER_FILE)
        entries = [json.loads(line) for line in manifest.read_text(encoding="utf-8").splitlines() if line.strip()]
        if split is not None:
            split_file = {"train": TRAIN_SPLIT, "val": VAL_SPLIT}[split]
            wanted = set((self.root / split_file).read_text(encoding="utf-8").split())
            entries = [e for e in entries if e["id"] in wanted]
        self.entries = entries
        self._image_cache: Dict[str, np.ndarray] = {}
        self._token_cache: Dict[str, tuple] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def sample(self, index: int) -> PreparedSample:
        entry = self.entries[index]
        ids, mask = self._tokens(entry)
        return PreparedSample(id=entry["id"], image=self._image(entry), token_ids=ids, pad_mask=mask)

    def _image(self, entry) -> np.ndarray:
        if entry["id"] not in self._image_cache:
            self._image_cache[entry["id"]] = imageio.load_png(self.root / entry["image"])
        return self._image_cache[entry["id"]]

    def _tokens(self, entry):
        if entry["id"] not in self._token_cache:
            self._token_cache[entry["id"]] = self.tokenizer.encode(entry["caption"])
        return self._token_cache[entry["id"]]

    def image_batch(self, indices: Sequence[int]) -> torch.Tensor:
        return imageio.batch_to_tensor([self._image(self.entries[i]) for i in indices])

    def token_batch(self, indices: Sequence[int]):
        ids, masks = [], []
        for i in indices:
            t, m = self._tokens(self.entries[i])
            ids.append(t)
            masks.append(m)
        return torch.tensor(ids, dtype=torch.long), torch.tensor(masks, dtype=torch.bool)

    def captions(self) -> List[str]:
        return [e["caption"] for e in self.entries]
