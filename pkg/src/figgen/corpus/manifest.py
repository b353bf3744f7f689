"""JSON-Lines manifest I/O: {"id", "image" (relative path), "caption"} per line."""

import json
from pathlib import Path
from typing import List, Sequence

from figgen import imageio
from figgen.corpus.records import FigureRecord

MANIFEST_NAME = "manifest.jsonl"
REQUIRED_KEYS = ("id", "image", "caption")


class ManifestError(ValueError):
    pass


def load_manifest(path) -> List[FigureRecord]:
    """Read records in file order; images resolve relative to the manifest."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent

    entries = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            missing = [k for k in REQUIRED_KEYS if k not in obj]
            if missing:
                raise ManifestError(f"{path}: line {lineno}: missing key(s) {missing}")
            entries.append(obj)

    missing_files = [e["id"] for e in entries if not (base / e["image"]).is_file()]
    if missing_files:
        raise ManifestError(f"{path}: missing image files for ids {missing_files}")

    records = []
    for entry in entries:
        image = imageio.load_png(base / entry["image"])
        h, w = image.shape[:2]
        rec = FigureRecord(
            id=str(entry["id"]),
            image=image,
            caption=str(entry["caption"]),
            source_width=w,
            source_height=h,
        )
        rec.validate()
        records.append(rec)
    return records


def write_corpus(records: Sequence[FigureRecord], out_dir) -> Path:
    """Write records as PNGs plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME
    with manifest_path.open("w", encoding="utf-8") as fh:
        for rec in records:
            rel = f"images/{rec.id}.png"
            imageio.save_png(out_dir / rel, rec.image)
            fh.write(json.dumps({"id": rec.id, "image": rel, "caption": rec.caption}) + "\n")
    return manifest_path
