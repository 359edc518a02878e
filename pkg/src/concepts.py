"""
The fifteen atomic concepts a scene is described with, and their roles.
"""

from enum import Enum
from typing import Tuple


class Role(str, Enum):
    KEY = "key"
    POSITION = "position"
    COLOR = "color"
    SHAPE = "shape"


class Concept(str, Enum):
    """
    Concept names in canonical order.

    The declaration order is load-bearing: codebook generation, serialization
    and scene enumeration all iterate in this order.
    """
    POSITION = "position"
    COLOR = "color"
    SHAPE = "shape"
    TOP_LEFT = "top-left"
    TOP_RIGHT = "top-right"
    BOTTOM_LEFT = "bottom-left"
    BOTTOM_RIGHT = "bottom-right"
    RED = "red"
    GREEN = "green"
    MAGENTA = "magenta"
    ORANGE = "orange"
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"
    CROSS = "cross"

    @property
    def role(self) -> Role:
        return _ROLE_OF[self]

    @property
    def order(self) -> int:
        """Position of the concept in canonical order."""
        return _INDEX_OF[self]

    def __str__(self) -> str:
        return self.value


ALL_CONCEPTS: Tuple[Concept, ...] = tuple(Concept)
KEYS: Tuple[Concept, ...] = (Concept.POSITION, Concept.COLOR, Concept.SHAPE)
POSITIONS: Tuple[Concept, ...] = (
    Concept.TOP_LEFT, Concept.TOP_RIGHT, Concept.BOTTOM_LEFT, Concept.BOTTOM_RIGHT,
)
COLORS: Tuple[Concept, ...] = (Concept.RED, Concept.GREEN, Concept.MAGENTA, Concept.ORANGE)
SHAPES: Tuple[Concept, ...] = (Concept.CIRCLE, Concept.SQUARE, Concept.TRIANGLE, Concept.CROSS)

_ROLE_OF = {
    **{c: Role.KEY for c in KEYS},
    **{c: Role.POSITION for c in POSITIONS},
    **{c: Role.COLOR for c in COLORS},
    **{c: Role.SHAPE for c in SHAPES},
}
_INDEX_OF = {c: i for i, c in enumerate(ALL_CONCEPTS)}


def require_role(concept: Concept, role: Role) -> Concept:
    """Coerces to Concept and checks the role; raises ValueError otherwise."""
    concept = Concept(concept)
    if concept.role is not role:
        raise ValueError(f"'{concept.value}' is a {concept.role.value} concept, expected {role.value}")
    return concept
