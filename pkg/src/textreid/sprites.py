"""Procedural sprite-person dataset with exact part masks and captions.

Each identity is a unique attribute map (colors and styles for hair, top,
bottom, shoes and optionally bag/hat). Renders are hard-edged rectangles on
an exact byte-valued palette, so images survive 8-bit image files without
loss, and the per-pixel part mask is ground truth by construction. Captions
are realizations of a closed template grammar naming every present
attribute, which keeps the vocabulary tiny and every caption word anchored
to pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DatasetError(Exception):
    pass


# Class ids double as the vote tie-break order (smallest wins).
CLASS_NAMES = ("background", "hair", "face", "top", "bottom", "shoes", "bag", "hat")
CLASS_ID = {name: i for i, name in enumerate(CLASS_NAMES)}
ATTRIBUTE_PARTS = ("hair", "top", "bottom", "shoes", "bag", "hat")
OPTIONAL_PARTS = ("bag", "hat")

COLOR_BYTES = {
    "red": (204, 0, 0),
    "blue": (0, 64, 204),
    "green": (0, 153, 51),
    "black": (26, 26, 26),
    "white": (242, 242, 242),
    "yellow": (230, 204, 0),
    "purple": (128, 0, 153),
    "orange": (230, 128, 0),
    "brown": (128, 77, 26),
    "gray": (128, 128, 128),
    "pink": (242, 128, 179),
    "cyan": (0, 191, 191),
    "navy": (26, 26, 102),
    "beige": (217, 191, 153),
}
SKIN_BYTES = (224, 172, 140)

PART_STYLES = {
    "hair": ("short", "long"),
    "top": ("shirt", "jacket"),
    "bottom": ("pants", "skirt"),
    "shoes": ("sneakers", "boots"),
    "bag": ("backpack", "handbag"),
    "hat": ("cap", "beanie"),
}

# Words that anchor a semantic class in captions (face is named via "person").
CLASS_WORDS = {
    "hair": ("hair",),
    "face": ("person",),
    "top": PART_STYLES["top"],
    "bottom": PART_STYLES["bottom"],
    "shoes": PART_STYLES["shoes"],
    "bag": PART_STYLES["bag"],
    "hat": PART_STYLES["hat"],
}

GLUE_WORDS = ("a", "person", "with", "wearing", "and", "carrying", "in", "hair")

SPRITE_H, SPRITE_W = 64, 32


@dataclass(frozen=True)
class Vocab:
    """Closed word vocabulary with dense ids and reserved special tokens."""

    word_to_id: dict
    pad_id: int
    sos_id: int
    eos_id: int
    mask_id: int

    @property
    def size(self) -> int:
        return len(self.word_to_id) + 4

    def id_to_word(self) -> dict:
        return {i: w for w, i in self.word_to_id.items()}


def build_vocab() -> Vocab:
    words = set(GLUE_WORDS)
    words.update(COLOR_BYTES)
    for styles in PART_STYLES.values():
        words.update(styles)
    word_to_id = {w: i + 4 for i, w in enumerate(sorted(words))}
    return Vocab(word_to_id=word_to_id, pad_id=0, sos_id=1, eos_id=2, mask_id=3)


def tokenize(text: str, vocab: Vocab, max_len: int) -> np.ndarray:
    words = text.split()
    if len(words) > max_len - 2:
        raise DatasetError(f"caption too long: {len(words)} words for max_len {max_len}")
    ids = [vocab.sos_id]
    for w in words:
        if w not in vocab.word_to_id:
            raise DatasetError(f"unknown word {w!r}")
        ids.append(vocab.word_to_id[w])
    ids.append(vocab.eos_id)
    ids.extend([vocab.pad_id] * (max_len - len(ids)))
    return np.asarray(ids, dtype=np.int64)


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    lookup = vocab.id_to_word()
    words = []
    for i in ids:
        i = int(i)
        if i in (vocab.sos_id, vocab.pad_id):
            continue
        if i == vocab.eos_id:
            break
        if i == vocab.mask_id or i not in lookup:
            raise DatasetError(f"id {i} does not detokenize")
        words.append(lookup[i])
    return " ".join(words)


@dataclass(frozen=True)
class PersonSpec:
    """One identity: an attribute map from part to (color, style)."""

    identity_id: int
    attributes: dict

    def key(self) -> tuple:
        return tuple(sorted(self.attributes.items()))


@dataclass
class Sample:
    """One caption record; several samples may share one rendered image."""

    image: np.ndarray            # (H, W, 3) float64 in [0, 1], byte exact
    token_ids: np.ndarray        # (max_len,) int64
    text: str
    identity_id: int
    image_index: int
    parse_map: np.ndarray        # (H, W) int64 class labels
    patch_labels: np.ndarray | None = None


@dataclass
class Dataset:
    samples: list
    vocab: Vocab
    num_classes: int
    max_len: int
    image_size: tuple
    specs: list | None = None


def attribute_space_size(num_classes: int) -> int:
    n_colors = len(COLOR_BYTES)
    total = 1
    for part in ATTRIBUTE_PARTS:
        options = n_colors * len(PART_STYLES[part])
        if part in OPTIONAL_PARTS:
            options = options + 1 if _part_allowed(part, num_classes) else 1
        total *= options
    return total


def _part_allowed(part: str, num_classes: int) -> bool:
    return CLASS_ID[part] < num_classes


def sample_person_specs(rng: np.random.Generator, num_identities: int,
                        num_classes: int) -> list:
    space = attribute_space_size(num_classes)
    if space < num_identities:
        raise DatasetError(
            f"attribute space {space} smaller than {num_identities} identities")
    colors = sorted(COLOR_BYTES)
    specs = []
    seen = set()
    while len(specs) < num_identities:
        attrs = {}
        for part in ATTRIBUTE_PARTS:
            if part in OPTIONAL_PARTS:
                allowed = _part_allowed(part, num_classes)
                present = allowed and rng.random() < (0.6 if part == "bag" else 0.4)
                if not present:
                    continue
            color = colors[rng.integers(len(colors))]
            style = PART_STYLES[part][rng.integers(len(PART_STYLES[part]))]
            attrs[part] = (color, style)
        key = tuple(sorted(attrs.items()))
        if key in seen:
            continue
        seen.add(key)
        specs.append(PersonSpec(identity_id=len(specs), attributes=attrs))
    return specs


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _color_f(byte_triple) -> np.ndarray:
    return np.asarray(byte_triple, dtype=np.float64) / 255.0


def _paint(image, parse, r0, r1, c0, c1, color, cls) -> None:
    image[r0:r1, c0:c1] = color
    parse[r0:r1, c0:c1] = cls


def render_sprite(spec: PersonSpec, jitter_dx: int, pose: int,
                  image_size: tuple = (SPRITE_H, SPRITE_W)) -> tuple:
    """Draw one person. jitter_dx shifts horizontally, pose spreads the legs.

    Returns (image, parse_map); every painted value is k/255 for integer k.
    """
    h, w = image_size
    if h < SPRITE_H or w < SPRITE_W:
        raise DatasetError(f"canvas {image_size} smaller than sprite {SPRITE_H}x{SPRITE_W}")
    if not -2 <= jitter_dx <= 2:
        raise DatasetError(f"jitter_dx {jitter_dx} outside [-2, 2]")
    if pose not in (0, 1, 2):
        raise DatasetError(f"pose {pose} outside {{0,1,2}}")
    image = np.zeros((h, w, 3), dtype=np.float64)
    parse = np.zeros((h, w), dtype=np.int64)
    top_margin = (h - SPRITE_H) // 2
    cx = (w - SPRITE_W) // 2 + SPRITE_W // 2 + jitter_dx

    def row(r):
        return top_margin + r

    attrs = spec.attributes

    # Torso first so hair/bag overdraw wins deterministically.
    tc, ts = attrs["top"]
    if ts == "shirt":
        _paint(image, parse, row(22), row(40), cx - 7, cx + 8, _color_f(COLOR_BYTES[tc]), CLASS_ID["top"])
    else:  # jacket: wider and longer
        _paint(image, parse, row(22), row(42), cx - 8, cx + 9, _color_f(COLOR_BYTES[tc]), CLASS_ID["top"])

    bc, bs = attrs["bottom"]
    bottom_color = _color_f(COLOR_BYTES[bc])
    if bs == "pants":
        gap = pose
        _paint(image, parse, row(42), row(54), cx - 6, cx - gap, bottom_color, CLASS_ID["bottom"])
        _paint(image, parse, row(42), row(54), cx + gap, cx + 6, bottom_color, CLASS_ID["bottom"])
    else:  # skirt: one block, slightly wider
        _paint(image, parse, row(42), row(52), cx - 8 + pose, cx + 8 - pose, bottom_color, CLASS_ID["bottom"])

    sc, ss = attrs["shoes"]
    shoe_color = _color_f(COLOR_BYTES[sc])
    shoe_top = 54 if ss == "sneakers" else 50
    _paint(image, parse, row(shoe_top), row(58), cx - 6, cx - 1, shoe_color, CLASS_ID["shoes"])
    _paint(image, parse, row(shoe_top), row(58), cx + 1, cx + 6, shoe_color, CLASS_ID["shoes"])

    _paint(image, parse, row(10), row(20), cx - 4, cx + 5, _color_f(SKIN_BYTES), CLASS_ID["face"])

    hc, hs = attrs["hair"]
    hair_color = _color_f(COLOR_BYTES[hc])
    _paint(image, parse, row(6), row(10), cx - 5, cx + 6, hair_color, CLASS_ID["hair"])
    if hs == "long":
        _paint(image, parse, row(10), row(26), cx - 7, cx - 5, hair_color, CLASS_ID["hair"])
        _paint(image, parse, row(10), row(26), cx + 6, cx + 8, hair_color, CLASS_ID["hair"])

    if "bag" in attrs:
        gc, gs = attrs["bag"]
        bag_color = _color_f(COLOR_BYTES[gc])
        if gs == "backpack":
            _paint(image, parse, row(24), row(38), cx + 9, cx + 13, bag_color, CLASS_ID["bag"])
        else:  # handbag hangs lower
            _paint(image, parse, row(36), row(46), cx + 9, cx + 14, bag_color, CLASS_ID["bag"])

    if "hat" in attrs:
        xc, xs = attrs["hat"]
        hat_color = _color_f(COLOR_BYTES[xc])
        if xs == "cap":
            _paint(image, parse, row(2), row(6), cx - 5, cx + 6, hat_color, CLASS_ID["hat"])
            _paint(image, parse, row(5), row(6), cx + 6, cx + 9, hat_color, CLASS_ID["hat"])
        else:  # beanie: taller, no brim
            _paint(image, parse, row(1), row(6), cx - 4, cx + 5, hat_color, CLASS_ID["hat"])

    return image, parse


def flip_horizontal(image: np.ndarray, parse: np.ndarray) -> tuple:
    """Mirror a render and its mask; used as the training-time augmentation."""
    return np.ascontiguousarray(image[:, ::-1]), np.ascontiguousarray(parse[:, ::-1])


# ---------------------------------------------------------------------------
# Captions
# ---------------------------------------------------------------------------


def _phrase(attrs, part) -> list:
    color, style = attrs[part]
    if part == "hair":
        return ["with", style, color, "hair"]
    if part == "bag":
        return ["carrying", "a", color, style]
    return ["a", color, style]


def realize_caption(spec: PersonSpec, variant: int) -> str:
    a = spec.attributes
    hair = _phrase(a, "hair")
    top = _phrase(a, "top")
    bottom = _phrase(a, "bottom")
    shoes = _phrase(a, "shoes")
    bag = _phrase(a, "bag") if "bag" in a else []
    hat = (["and"] + _phrase(a, "hat")) if "hat" in a else []
    if variant % 3 == 0:
        words = (["a", "person"] + hair + ["wearing"] + top + ["and"] + bottom
                 + ["and"] + shoes + bag + hat)
    elif variant % 3 == 1:
        words = (["a", "person", "wearing"] + top + ["and"] + bottom + hair
                 + ["and"] + shoes + hat + bag)
    else:
        words = (["a", "person", "in"] + top + ["and"] + bottom + ["wearing"]
                 + shoes + hair + bag + hat)
    return " ".join(words)


# ---------------------------------------------------------------------------
# Generation and splits
# ---------------------------------------------------------------------------


def _sub_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def generate_dataset(seed: int, num_identities: int, images_per_identity: int,
                     captions_per_image: int, image_size: tuple = (SPRITE_H, SPRITE_W),
                     max_len: int = 32, num_classes: int = 8) -> Dataset:
    """Deterministic dataset build; sample k of image j of identity i draws
    its jitter from a sub-seed of (seed, i, j), so renders are reproducible
    in any generation order."""
    if min(num_identities, images_per_identity, captions_per_image) <= 0:
        raise DatasetError("all counts must be positive")
    if num_classes < CLASS_ID["shoes"] + 1:
        raise DatasetError(f"num_classes {num_classes} cannot cover the base parts")
    vocab = build_vocab()
    spec_rng = _sub_rng(seed, 0)
    specs = sample_person_specs(spec_rng, num_identities, num_classes)
    samples = []
    for spec in specs:
        for j in range(images_per_identity):
            rj = _sub_rng(seed, 1, spec.identity_id, j)
            dx = int(rj.integers(-2, 3))
            pose = int(rj.integers(0, 3))
            image, parse = render_sprite(spec, dx, pose, image_size)
            image_index = spec.identity_id * images_per_identity + j
            # Captions of one image cycle through distinct template variants.
            variant_order = _sub_rng(seed, 2, spec.identity_id, j).permutation(3)
            for k in range(captions_per_image):
                variant = int(variant_order[k % 3])
                text = realize_caption(spec, variant)
                samples.append(Sample(
                    image=image,
                    token_ids=tokenize(text, vocab, max_len),
                    text=text,
                    identity_id=spec.identity_id,
                    image_index=image_index,
                    parse_map=parse,
                ))
    return Dataset(samples=samples, vocab=vocab, num_classes=num_classes,
                   max_len=max_len, image_size=tuple(image_size), specs=specs)


def split_by_identity(dataset: Dataset, test_fraction: float = 0.25) -> tuple:
    """Identity-disjoint (train, test) sample lists; the highest-id quarter
    of identities is held out by default."""
    ids = sorted({s.identity_id for s in dataset.samples})
    n_test = max(1, int(round(len(ids) * test_fraction)))
    test_ids = set(ids[len(ids) - n_test:])
    train = [s for s in dataset.samples if s.identity_id not in test_ids]
    test = [s for s in dataset.samples if s.identity_id in test_ids]
    if not train or not test:
        raise DatasetError("identity split produced an empty side")
    return train, test


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Field-by-field equality over everything the on-disk format persists."""
    if (a.num_classes, a.max_len, tuple(a.image_size)) != (b.num_classes, b.max_len, tuple(b.image_size)):
        return False
    if a.vocab != b.vocab or len(a.samples) != len(b.samples):
        return False
    for sa, sb in zip(a.samples, b.samples):
        if sa.text != sb.text or sa.identity_id != sb.identity_id \
                or sa.image_index != sb.image_index:
            return False
        if not np.array_equal(sa.token_ids, sb.token_ids):
            return False
        if not np.array_equal(sa.image, sb.image) or not np.array_equal(sa.parse_map, sb.parse_map):
            return False
    return True
