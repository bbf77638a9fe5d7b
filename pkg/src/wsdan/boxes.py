from dataclasses import dataclass

from ._validation import ContractError


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel rectangle ``[top, bottom) x [left, right)``."""

    top: int
    left: int
    bottom: int
    right: int

    def __post_init__(self):
        if not (0 <= self.top < self.bottom and 0 <= self.left < self.right):
            raise ContractError(f"degenerate box {self.as_tuple()}")

    @property
    def height(self):
        return self.bottom - self.top

    @property
    def width(self):
        return self.right - self.left

    @property
    def area(self):
        return self.height * self.width

    def as_tuple(self):
        return (self.top, self.left, self.bottom, self.right)

    def contains(self, other):
        return (self.top <= other.top and self.left <= other.left
                and other.bottom <= self.bottom and other.right <= self.right)

    def fits(self, height, width):
        return self.bottom <= height and self.right <= width

    @classmethod
    def full(cls, height, width):
        return cls(0, 0, height, width)

    def __str__(self):
        return "({},{},{},{})".format(*self.as_tuple())
