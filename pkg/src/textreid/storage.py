"""On-disk dataset layout: images/NNNN.ppm, parse/NNNN.pgm, meta.jsonl, vocab.json.

Images are binary PPM (P6) and parse maps binary PGM (P5); both survive a
write/read cycle bit exactly because the generator only paints k/255 values.
meta.jsonl holds one record per caption (image file, caption text, identity);
vocab.json holds the word table, special ids, and dataset-level settings.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .sprites import Dataset, Sample, Vocab, tokenize


class StorageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Netpbm primitives
# ---------------------------------------------------------------------------


def _read_netpbm_header(blob: bytes, magic: bytes, path) -> tuple:
    """Parse 'P5/P6 <w> <h> <maxval>' allowing comments and any whitespace."""
    if not blob.startswith(magic):
        raise StorageError(f"{path}: expected {magic.decode()} header")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise StorageError(f"{path}: truncated header")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            nl = blob.find(b"\n", pos)
            if nl < 0:
                raise StorageError(f"{path}: unterminated comment")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            m = re.match(rb"\d+", blob[pos:])
            if not m:
                raise StorageError(f"{path}: corrupt header near byte {pos}")
            fields.append(int(m.group()))
            pos += m.end()
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise StorageError(f"{path}: header not terminated by whitespace")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise StorageError(f"{path}: only maxval 255 supported, got {maxval}")
    return width, height, pos


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image whose values are all k/255 exactly."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise StorageError(f"write_ppm: image shape {image.shape} is not (H, W, 3)")
    scaled = image * 255.0
    rounded = np.rint(scaled)
    if not np.array_equal(rounded, scaled) or rounded.min() < 0 or rounded.max() > 255:
        raise StorageError("write_ppm: image values are not exact byte levels")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rounded.astype(np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    width, height, pos = _read_netpbm_header(blob, b"P6", path)
    need = width * height * 3
    body = blob[pos:pos + need]
    if len(body) != need:
        raise StorageError(f"{path}: expected {need} pixel bytes, got {len(body)}")
    raw = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    return raw.astype(np.float64) / 255.0


def write_pgm(path, labels: np.ndarray) -> None:
    if labels.ndim != 2:
        raise StorageError(f"write_pgm: labels shape {labels.shape} is not 2-D")
    if labels.min() < 0 or labels.max() > 255:
        raise StorageError("write_pgm: labels outside [0, 255]")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(labels.astype(np.uint8).tobytes())


def read_pgm(path, num_classes: int | None = None) -> np.ndarray:
    blob = Path(path).read_bytes()
    width, height, pos = _read_netpbm_header(blob, b"P5", path)
    need = width * height
    body = blob[pos:pos + need]
    if len(body) != need:
        raise StorageError(f"{path}: expected {need} label bytes, got {len(body)}")
    labels = np.frombuffer(body, dtype=np.uint8).reshape(height, width).astype(np.int64)
    if num_classes is not None and labels.max() >= num_classes:
        raise StorageError(
            f"{path}: label {int(labels.max())} out of range for {num_classes} classes")
    return labels


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------


def write_dataset(root, dataset: Dataset) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "parse").mkdir(parents=True, exist_ok=True)
    written = set()
    records = []
    for s in dataset.samples:
        img_rel = f"images/{s.image_index:04d}.ppm"
        parse_rel = f"parse/{s.image_index:04d}.pgm"
        if s.image_index not in written:
            write_ppm(root / img_rel, s.image)
            write_pgm(root / parse_rel, s.parse_map)
            written.add(s.image_index)
        records.append({"image": img_rel, "parse": parse_rel,
                        "identity": s.identity_id, "text": s.text})
    with open(root / "meta.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    vocab_blob = {
        "word_to_id": dataset.vocab.word_to_id,
        "pad_id": dataset.vocab.pad_id,
        "sos_id": dataset.vocab.sos_id,
        "eos_id": dataset.vocab.eos_id,
        "mask_id": dataset.vocab.mask_id,
        "max_len": dataset.max_len,
        "num_classes": dataset.num_classes,
        "image_size": list(dataset.image_size),
    }
    with open(root / "vocab.json", "w", encoding="utf-8") as fh:
        json.dump(vocab_blob, fh, sort_keys=True, indent=1)


def read_dataset(root) -> Dataset:
    root = Path(root)
    try:
        vocab_blob = json.loads((root / "vocab.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise StorageError(f"{root}: missing vocab.json") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"{root}: corrupt vocab.json") from exc
    vocab = Vocab(word_to_id=dict(vocab_blob["word_to_id"]),
                  pad_id=vocab_blob["pad_id"], sos_id=vocab_blob["sos_id"],
                  eos_id=vocab_blob["eos_id"], mask_id=vocab_blob["mask_id"])
    max_len = int(vocab_blob["max_len"])
    num_classes = int(vocab_blob["num_classes"])
    image_size = tuple(vocab_blob["image_size"])

    images: dict[str, np.ndarray] = {}
    parses: dict[str, np.ndarray] = {}
    samples = []
    meta_path = root / "meta.jsonl"
    if not meta_path.exists():
        raise StorageError(f"{root}: missing meta.jsonl")
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise StorageError(f"{meta_path}:{lineno + 1}: corrupt record") from exc
        img_rel, parse_rel = rec["image"], rec["parse"]
        if img_rel not in images:
            images[img_rel] = read_ppm(root / img_rel)
            parses[parse_rel] = read_pgm(root / parse_rel, num_classes=num_classes)
            if images[img_rel].shape[:2] != parses[parse_rel].shape:
                raise StorageError(
                    f"{root}: image {img_rel} {images[img_rel].shape[:2]} does not "
                    f"match parse {parse_rel} {parses[parse_rel].shape}")
            if images[img_rel].shape[:2] != image_size:
                raise StorageError(
                    f"{root}: {img_rel} size {images[img_rel].shape[:2]} does not "
                    f"match metadata {image_size}")
        image_index = int(Path(img_rel).stem)
        samples.append(Sample(
            image=images[img_rel],
            token_ids=tokenize(rec["text"], vocab, max_len),
            text=rec["text"],
            identity_id=int(rec["identity"]),
            image_index=image_index,
            parse_map=parses[parse_rel],
        ))
    return Dataset(samples=samples, vocab=vocab, num_classes=num_classes,
                   max_len=max_len, image_size=image_size)
