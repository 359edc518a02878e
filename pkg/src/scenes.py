"""
Two-figure scenes: enumeration, rasterization, clean hypervector encoding,
symbolic labelling and train/test splitting.
"""

import logging
from functools import lru_cache
from itertools import permutations, product
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.concepts import COLORS, POSITIONS, SHAPES, Concept, Role, require_role
from src.hdc import Codebook, HDVector, bind, bundle, bundle_many, cleanup

logger = logging.getLogger(__name__)

IMAGE_SIZE = 28
QUADRANT = 14
GLYPH = 12
CHANNELS = 3
IMAGE_LEN = IMAGE_SIZE * IMAGE_SIZE * CHANNELS

COLOR_RGB: Dict[Concept, Tuple[float, float, float]] = {
    Concept.RED: (1.0, 0.0, 0.0),
    Concept.GREEN: (0.0, 1.0, 0.0),
    Concept.MAGENTA: (1.0, 0.0, 1.0),
    Concept.ORANGE: (1.0, 0.647, 0.0),
}

# (row, col) of each quadrant's top-left pixel
QUADRANT_ORIGIN: Dict[Concept, Tuple[int, int]] = {
    Concept.TOP_LEFT: (0, 0),
    Concept.TOP_RIGHT: (0, QUADRANT),
    Concept.BOTTOM_LEFT: (QUADRANT, 0),
    Concept.BOTTOM_RIGHT: (QUADRANT, QUADRANT),
}

QUESTION_LABELS = ("q1", "q2", "q3", "q4", "q5")
GENERALIZATION_LABELS = ("g1", "g2", "g3")


class Figure(BaseModel):
    """A shape painted in one color."""
    model_config = ConfigDict(frozen=True)

    shape: Concept
    color: Concept

    @field_validator("shape")
    @classmethod
    def _is_shape(cls, v: Concept) -> Concept:
        return require_role(v, Role.SHAPE)

    @field_validator("color")
    @classmethod
    def _is_color(cls, v: Concept) -> Concept:
        return require_role(v, Role.COLOR)


class Placement(BaseModel):
    model_config = ConfigDict(frozen=True)

    position: Concept
    figure: Figure

    @field_validator("position")
    @classmethod
    def _is_position(cls, v: Concept) -> Concept:
        return require_role(v, Role.POSITION)


class Scene(BaseModel):
    """
    Symbolic description of one image: exactly two figures at distinct positions.

    Attributes:
        placements (Tuple[Placement, Placement]): The two figures, in the order
            they were enumerated. Order never changes the image, the encoding
            or the labels.
    """
    model_config = ConfigDict(frozen=True)

    placements: Tuple[Placement, Placement]

    @model_validator(mode="after")
    def _distinct_positions(self) -> "Scene":
        a, b = self.placements
        if a.position == b.position:
            raise ValueError(f"both figures are at {a.position.value}")
        return self

    @classmethod
    def of(cls, *items: Tuple[Concept, Concept, Concept]) -> "Scene":
        """Builds a scene from ``(position, shape, color)`` triples."""
        return cls(placements=tuple(
            Placement(position=p, figure=Figure(shape=s, color=c)) for p, s, c in items
        ))

    def figure_at(self, position: Concept) -> Optional[Figure]:
        for placement in self.placements:
            if placement.position == position:
                return placement.figure
        return None

    def identity(self) -> Tuple[Tuple[str, str, str], ...]:
        """Canonical key: two scenes share it iff they render to the same image."""
        ordered = sorted(self.placements, key=lambda p: p.position.order)
        return tuple((p.position.value, p.figure.shape.value, p.figure.color.value) for p in ordered)

    def describe(self) -> str:
        return "; ".join(
            f"{p.position.value}: {p.figure.color.value} {p.figure.shape.value}" for p in self.placements
        )


class SplitSpec(BaseModel):
    """How a record list is divided into train and test."""
    model_config = ConfigDict(frozen=True)

    split_seed: int = 7
    test_fraction: float = Field(default=0.30, gt=0.0, lt=1.0)
    dedupe: bool = True


class DatasetRecord(BaseModel):
    """
    One element of the dataset.

    Attributes:
        index (int): Position in the enumeration.
        scene (Scene): Symbolic ground truth.
        image (np.ndarray): ``(28, 28, 3)`` float32 pixels in [0, 1].
        m (np.ndarray): Clean encoding of ``scene``.
        q (Tuple[bool, ...]): Answers to the five training questions.
        g (Tuple[bool, ...]): Square / triangle / cross existence labels.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    index: int
    scene: Scene
    image: np.ndarray
    m: np.ndarray
    q: Tuple[bool, bool, bool, bool, bool]
    g: Tuple[bool, bool, bool]
    split: Optional[Literal["train", "test"]] = None


def enumerate_scenes(dedupe: bool = True) -> List[Scene]:
    """
    Lists every two-figure scene.

    Args:
        dedupe (bool): If True, one canonical scene per distinct image (unordered
            position pairs, 1536 scenes). If False, every ordered pair of
            distinct positions (3072 scenes; each image appears twice).

    Returns:
        List[Scene]: Ordered by (pos1, pos2, shape1, shape2, color1, color2)
        enumeration indices.
    """
    if dedupe:
        position_pairs = [(a, b) for a, b in permutations(POSITIONS, 2) if a.order < b.order]
    else:
        position_pairs = list(permutations(POSITIONS, 2))

    scenes = []
    for (p1, p2), s1, s2, c1, c2 in product(position_pairs, SHAPES, SHAPES, COLORS, COLORS):
        scenes.append(Scene.of((p1, s1, c1), (p2, s2, c2)))
    return scenes


def _square_mask() -> np.ndarray:
    mask = np.zeros((GLYPH, GLYPH), dtype=bool)
    mask[1:11, 1:11] = True
    return mask


def _circle_mask() -> np.ndarray:
    r, c = np.mgrid[0:GLYPH, 0:GLYPH]
    return (r - 5.5) ** 2 + (c - 5.5) ** 2 <= 25.0


def _triangle_mask() -> np.ndarray:
    # apex at the top centre, full-width base on the last row
    r, c = np.mgrid[0:GLYPH, 0:GLYPH]
    return np.abs(c - 5.5) <= 0.5 + r / 2.0


def _cross_mask() -> np.ndarray:
    mask = np.zeros((GLYPH, GLYPH), dtype=bool)
    mask[4:8, :] = True
    mask[:, 4:8] = True
    return mask


@lru_cache(maxsize=None)
def glyph_mask(shape: Concept) -> np.ndarray:
    """Fixed 12x12 binary mask of a shape (read-only)."""
    builders = {
        Concept.SQUARE: _square_mask,
        Concept.CIRCLE: _circle_mask,
        Concept.TRIANGLE: _triangle_mask,
        Concept.CROSS: _cross_mask,
    }
    mask = builders[require_role(shape, Role.SHAPE)]()
    mask.setflags(write=False)
    return mask


def render(scene: Scene) -> npt.NDArray[np.float32]:
    """
    Rasterizes a scene to a 28x28 RGB image.

    Each figure's glyph is centred in its 14x14 quadrant with a one pixel
    margin; the background is black.

    Returns:
        np.ndarray: ``(28, 28, 3)`` float32 array, channels R, G, B.
    """
    image = np.zeros((IMAGE_SIZE, IMAGE_SIZE, CHANNELS), dtype=np.float32)
    for placement in scene.placements:
        row0, col0 = QUADRANT_ORIGIN[placement.position]
        window = image[row0 + 1:row0 + 1 + GLYPH, col0 + 1:col0 + 1 + GLYPH]
        window[glyph_mask(placement.figure.shape)] = COLOR_RGB[placement.figure.color]
    return image


def flatten_image(image: np.ndarray) -> npt.NDArray[np.float32]:
    """Row-major, channel-last flattening used as network input (length 2352)."""
    return np.ascontiguousarray(image, dtype=np.float32).reshape(-1)


def encode_placement(position: Concept, figure: Figure, cb: Codebook) -> HDVector:
    """``pos ⊗ (shape ⊗ s ⊕ color ⊗ c)`` for one figure."""
    attributes = bundle(
        bind(cb[Concept.SHAPE], cb[figure.shape]),
        bind(cb[Concept.COLOR], cb[figure.color]),
    )
    return bind(cb[position], attributes)


def encode_scene(scene: Scene, cb: Codebook) -> HDVector:
    """
    Clean knowledge-base vector of a scene.

    Every component is an even integer in [-4, 4] (a sum of four ±1 products).
    """
    return bundle_many(encode_placement(p.position, p.figure, cb) for p in scene.placements)


def decode_attribute(m: np.ndarray, position: Concept, key: Concept, cb: Codebook) -> Tuple[Concept, float]:
    """
    Reads the shape or color stored at ``position`` in ``m``.

    Args:
        m (np.ndarray): Clean encoding or network output.
        position (Concept): One of the four positions.
        key (Concept): ``Concept.SHAPE`` or ``Concept.COLOR``.
        cb (Codebook): Codebook ``m`` was built with.

    Returns:
        Tuple[Concept, float]: Best matching value and its margin over the
        runner-up (0 on a tie, in which case the earlier value wins).
    """
    value, margin, _ = decode_attribute_detail(m, position, key, cb)
    return value, margin


def decode_attribute_detail(
    m: np.ndarray, position: Concept, key: Concept, cb: Codebook,
) -> Tuple[Concept, float, Dict[Concept, float]]:
    """Like ``decode_attribute`` but also returns every candidate's cosine."""
    position = require_role(position, Role.POSITION)
    key = Concept(key)
    if key not in (Concept.SHAPE, Concept.COLOR):
        raise ValueError(f"key must be shape or color, got {key.value}")
    candidates = SHAPES if key is Concept.SHAPE else COLORS
    probe = bind(bind(cb[position], cb[key]), m)
    return cleanup(probe, candidates, cb)


def label_scene(scene: Scene) -> Tuple[Tuple[bool, ...], Tuple[bool, ...]]:
    """
    Symbolic answers for one scene.

    Returns:
        Tuple[Tuple[bool, ...], Tuple[bool, ...]]: ``(q1..q5, g1..g3)`` where
        q1 circle exists, q2 green exists, q3 a magenta triangle exists,
        q4 the bottom-left figure is a square, q5 top-left and top-right are
        both occupied by the same shape; g1..g3 square / triangle / cross exist.
    """
    figures = [p.figure for p in scene.placements]
    shapes = {f.shape for f in figures}
    bottom_left = scene.figure_at(Concept.BOTTOM_LEFT)
    top_left = scene.figure_at(Concept.TOP_LEFT)
    top_right = scene.figure_at(Concept.TOP_RIGHT)

    q = (
        Concept.CIRCLE in shapes,
        any(f.color == Concept.GREEN for f in figures),
        any(f.shape == Concept.TRIANGLE and f.color == Concept.MAGENTA for f in figures),
        bottom_left is not None and bottom_left.shape == Concept.SQUARE,
        top_left is not None and top_right is not None and top_left.shape == top_right.shape,
    )
    g = (Concept.SQUARE in shapes, Concept.TRIANGLE in shapes, Concept.CROSS in shapes)
    return q, g


def make_record(index: int, scene: Scene, cb: Codebook) -> DatasetRecord:
    q, g = label_scene(scene)
    return DatasetRecord(index=index, scene=scene, image=render(scene), m=encode_scene(scene, cb), q=q, g=g)


def split_indices(scenes: Sequence[Scene], spec: SplitSpec) -> Tuple[List[int], List[int]]:
    """
    Deterministic train/test partition of record indices.

    With ``spec.dedupe`` every record is independent and the first
    ``floor(test_fraction * N)`` shuffled records are test. Otherwise records
    are grouped by image identity, ``floor(test_fraction * groups)`` shuffled
    groups are test and every duplicate follows its group, so no image is on
    both sides.

    Returns:
        Tuple[List[int], List[int]]: ``(train, test)`` indices in ascending order.
    """
    if not scenes:
        raise ValueError("cannot split an empty record list")

    if spec.dedupe:
        groups = [[i] for i in range(len(scenes))]
    else:
        by_identity: Dict[tuple, List[int]] = {}
        for i, scene in enumerate(scenes):
            by_identity.setdefault(scene.identity(), []).append(i)
        groups = list(by_identity.values())

    rng = np.random.Generator(np.random.PCG64(spec.split_seed))
    order = rng.permutation(len(groups))
    n_test = int(np.floor(spec.test_fraction * len(groups)))

    test = sorted(i for g in order[:n_test] for i in groups[g])
    train = sorted(i for g in order[n_test:] for i in groups[g])
    return train, test


def split_dataset(records: Sequence[DatasetRecord], spec: SplitSpec) -> Tuple[List[DatasetRecord], List[DatasetRecord]]:
    """Splits records into ``(train, test)``; see ``split_indices``."""
    train, test = split_indices([r.scene for r in records], spec)
    return (
        [records[i].model_copy(update={"split": "train"}) for i in train],
        [records[i].model_copy(update={"split": "test"}) for i in test],
    )


class SceneDataset:
    """
    The full labelled dataset with its split, plus stacked array views.

    Attributes:
        records (List[DatasetRecord]): Every record, in enumeration order, with
            ``split`` filled in.
        codebook_seed (int): Seed of the codebook behind ``m``.
        dim (int): Hypervector dimension.
        split_spec (SplitSpec): How ``split`` was assigned.
    """

    def __init__(self, records: List[DatasetRecord], codebook_seed: int, dim: int, split_spec: SplitSpec):
        self.records = records
        self.codebook_seed = codebook_seed
        self.dim = dim
        self.split_spec = split_spec

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dedupe(self) -> bool:
        return self.split_spec.dedupe

    def indices(self, split: Optional[str] = None) -> List[int]:
        """Record indices of one split (``train``/``test``) or all of them."""
        if split in (None, "all"):
            return list(range(len(self.records)))
        if split not in ("train", "test"):
            raise ValueError(f"unknown split '{split}'")
        return [i for i, r in enumerate(self.records) if r.split == split]

    def images(self, idx: Optional[Sequence[int]] = None) -> npt.NDArray[np.float32]:
        """``(n, 2352)`` flattened images."""
        idx = range(len(self.records)) if idx is None else idx
        return np.stack([flatten_image(self.records[i].image) for i in idx])

    def encodings(self, idx: Optional[Sequence[int]] = None) -> npt.NDArray[np.float64]:
        idx = range(len(self.records)) if idx is None else idx
        return np.stack([self.records[i].m for i in idx])

    def question_labels(self, idx: Optional[Sequence[int]] = None) -> npt.NDArray[np.bool_]:
        idx = range(len(self.records)) if idx is None else idx
        return np.array([self.records[i].q for i in idx], dtype=bool)

    def scenes(self, idx: Optional[Sequence[int]] = None) -> List[Scene]:
        idx = range(len(self.records)) if idx is None else idx
        return [self.records[i].scene for i in idx]


def build_dataset(cb: Codebook, split_spec: SplitSpec) -> SceneDataset:
    """
    Enumerates, renders, encodes, labels and splits every scene.

    ``split_spec.dedupe`` selects the 1536-record deduplicated dataset or the
    3072-record one with identity-grouped splitting.
    """
    scenes = enumerate_scenes(dedupe=split_spec.dedupe)
    records = [make_record(i, scene, cb) for i, scene in enumerate(scenes)]
    train, test = split_indices(scenes, split_spec)
    assignment = {i: "train" for i in train} | {i: "test" for i in test}
    records = [r.model_copy(update={"split": assignment[r.index]}) for r in records]
    logger.info("built %d records (%d train / %d test)", len(records), len(train), len(test))
    return SceneDataset(records, codebook_seed=cb.seed, dim=cb.dim, split_spec=split_spec)
