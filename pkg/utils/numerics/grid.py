"""
網格模組 - 均勻徑向網格與環形分辨的複合取樣
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from utils.common.errors import ValidationFailure


@dataclass(frozen=True)
class Grid1D:
    """
    均勻徑向網格 r_i = i·h, i = 0..N，r_N = r_max

    Args:
        h: 網格間距
        r_max: 外邊界半徑
        order: 空間離散階數（2 或 4）
    """

    h: float
    r_max: float
    order: int = 4

    def __post_init__(self):
        if self.h <= 0:
            raise ValidationFailure(f"grid spacing must be positive, got {self.h}")
        if self.r_max <= 8 * self.h:
            raise ValidationFailure(f"grid extent {self.r_max} too small for spacing {self.h}")
        if self.order not in (2, 4):
            raise ValidationFailure(f"discretization order must be 2 or 4, got {self.order}")

    @cached_property
    def n_intervals(self) -> int:
        return int(round(self.r_max / self.h))

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.h * np.arange(self.n_intervals + 1, dtype=float)

    @property
    def interior(self) -> np.ndarray:
        """Nodes r_1..r_{N-1}."""
        return self.nodes[1:-1]

    @property
    def extent(self) -> float:
        return float(self.nodes[-1])

    def index_of(self, r: float) -> int:
        """Index of the node closest to r."""
        if r < 0 or r > self.extent:
            raise ValidationFailure(f"radius {r} outside grid [0, {self.extent}]")
        return int(round(r / self.h))

    def refined(self, factor: int = 2) -> "Grid1D":
        return Grid1D(h=self.h / factor, r_max=self.r_max, order=self.order)

    def describe(self) -> dict:
        return {"h": self.h, "r_max": self.extent, "order": self.order, "nodes": self.n_intervals + 1}


def composite_nodes(r_max: float, per_annulus: int = 64, uniform_until: float = 2.0) -> np.ndarray:
    """
    均勻加幾何的複合取樣點

    Uniform on [0, uniform_until] and then `per_annulus` geometric nodes per
    dyadic interval, so every annulus [2^m, 2^{m+1}] holds at least per_annulus nodes.
    """
    if r_max <= 0:
        raise ValidationFailure(f"sampling extent must be positive, got {r_max}")
    if per_annulus < 2:
        raise ValidationFailure("need at least two nodes per annulus")
    head_end = min(uniform_until, r_max)
    head = np.linspace(0.0, head_end, per_annulus + 1)
    if r_max <= head_end:
        return head
    decades = np.log2(r_max / head_end)
    count = max(int(np.ceil(decades * per_annulus)), 1)
    tail = head_end * np.exp2(np.linspace(0.0, decades, count + 1))
    tail[-1] = r_max
    return np.concatenate([head, tail[1:]])
