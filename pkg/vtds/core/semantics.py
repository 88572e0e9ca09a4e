import numpy as np
from enum import Enum


class SemanticClass(Enum):
    SKY = 0
    BUILDING = 1
    CAR = 2
    ROAD = 3
    SIDEWALK = 4
    VEGETATION = 5
    FENCE = 6
    TRAFFIC_SIGN = 7
    TRAFFIC_LIGHT = 8
    LAMP_POLE = 9
    BILLBOARD = 10
    TREE = 11
    CYCLIST = 12
    PEDESTRIAN = 13
    CHAIR = 14

    @property
    def label(self) -> str:
        """
        Lower-case name as used in rule files and the manifest.
        """
        return self.name.lower()

    @property
    def color(self) -> tuple:
        return PALETTE[self]

    @property
    def annotatable(self) -> bool:
        return self in ANNOTATABLE

    @classmethod
    def from_label(cls, label: str) -> "SemanticClass":
        try:
            return cls[label.upper()]
        except KeyError:
            raise ValueError(
                f"Unknown semantic class '{label}'; expected one of {class_labels()}."
            ) from None


PALETTE = {
    SemanticClass.SKY: (70, 130, 180),
    SemanticClass.BUILDING: (70, 70, 70),
    SemanticClass.CAR: (0, 0, 142),
    SemanticClass.ROAD: (128, 64, 128),
    SemanticClass.SIDEWALK: (244, 35, 232),
    SemanticClass.VEGETATION: (107, 142, 35),
    SemanticClass.FENCE: (190, 153, 153),
    SemanticClass.TRAFFIC_SIGN: (220, 220, 0),
    SemanticClass.TRAFFIC_LIGHT: (250, 170, 30),
    SemanticClass.LAMP_POLE: (153, 153, 153),
    SemanticClass.BILLBOARD: (255, 128, 0),
    SemanticClass.TREE: (0, 192, 64),
    SemanticClass.CYCLIST: (119, 11, 32),
    SemanticClass.PEDESTRIAN: (220, 20, 60),
    SemanticClass.CHAIR: (160, 96, 255),
}

ANNOTATABLE = frozenset(
    {SemanticClass.CAR, SemanticClass.CYCLIST, SemanticClass.PEDESTRIAN}
)

NUM_CLASSES = len(SemanticClass)


def class_labels() -> list:
    return [c.label for c in SemanticClass]


def palette_array() -> np.ndarray:
    """
    Palette as a (15, 3) uint8 array indexed by class id.
    """
    return np.array([PALETTE[c] for c in SemanticClass], dtype=np.uint8)


def annotatable_ids() -> np.ndarray:
    return np.array(sorted(c.value for c in ANNOTATABLE), dtype=np.int64)
