"""
差分模板模組 - 有限差分權重與中心差分導數

Weights are generated with Fornberg's recursion so any derivative order and
any (possibly one-sided) offset set can be requested.
"""
from functools import lru_cache
from typing import Callable, Sequence, Tuple

import numpy as np

from utils.common.errors import ValidationFailure

# 每個導數階數的相對步長（以 max(|r|, 1) 與剖面長度尺度縮放）
RELATIVE_STEPS = {1: 1.0e-2, 2: 2.0e-2, 3: 4.0e-2, 4: 6.0e-2, 5: 8.0e-2, 6: 1.0e-1}

CENTRAL_OFFSETS = tuple(range(-4, 5))


def fornberg_weights(x0: float, nodes: Sequence[float], order: int) -> np.ndarray:
    """
    Finite-difference weights for the order-th derivative at x0.

    Args:
        x0: evaluation point
        nodes: stencil node positions
        order: derivative order

    Returns:
        np.ndarray: weights w with f^{(order)}(x0) ≈ Σ w_k f(nodes[k])
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    if order >= n:
        raise ValidationFailure(f"need more than {order} nodes for derivative order {order}, got {n}")
    c = np.zeros((n, order + 1))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 = c2 * c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


@lru_cache(maxsize=None)
def integer_stencil(offsets: Tuple[int, ...], order: int) -> np.ndarray:
    """Weights on integer offsets for unit spacing (cached)."""
    return fornberg_weights(0.0, offsets, order)


def central_derivative(
    func: Callable[[np.ndarray], np.ndarray],
    r: np.ndarray,
    order: int,
    length_scale: float = np.inf,
    fine_extent: float = np.inf,
) -> np.ndarray:
    """
    高階中心差分導數

    Uses the nine-point symmetric stencil (8th order for first and second
    derivatives, 6th order for third and fourth) with a step proportional to
    min(max(|r|, 1), length_scale). Past fine_extent the length-scale cap is
    lifted so far-field steps grow with r again.

    Args:
        func: vectorized function of r (must accept negative arguments)
        r: evaluation points
        order: derivative order ≥ 1
        length_scale: characteristic variation scale of func
        fine_extent: radius beyond which length_scale no longer caps the step

    Returns:
        np.ndarray: derivative values
    """
    if order < 1:
        raise ValidationFailure(f"derivative order must be >= 1, got {order}")
    if order not in RELATIVE_STEPS:
        raise ValidationFailure(f"derivative order {order} exceeds the supported maximum {max(RELATIVE_STEPS)}")
    r = np.asarray(r, dtype=float)
    wide = np.maximum(np.abs(r), 1.0)
    scale = np.where(np.abs(r) <= fine_extent, np.minimum(wide, length_scale), wide)
    step = RELATIVE_STEPS[order] * scale
    weights = integer_stencil(CENTRAL_OFFSETS, order)
    centre = func(r)
    total = np.zeros_like(r)
    # weights sum to zero, so differences against the centre keep constants exact
    for k, w in zip(CENTRAL_OFFSETS, weights):
        if w != 0.0 and k != 0:
            total = total + w * (func(r + k * step) - centre)
    return total / step ** order


def second_derivative_weights(order_of_accuracy: int) -> np.ndarray:
    """Symmetric weights for ∂² on unit spacing: (1, −2, 1) or (−1, 16, −30, 16, −1)/12."""
    if order_of_accuracy == 2:
        return np.array([1.0, -2.0, 1.0])
    if order_of_accuracy == 4:
        return np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
    raise ValidationFailure(f"unsupported discretization order {order_of_accuracy}; use 2 or 4")


def first_derivative_weights(order_of_accuracy: int) -> np.ndarray:
    """Antisymmetric weights for ∂ on unit spacing."""
    if order_of_accuracy == 2:
        return np.array([-0.5, 0.0, 0.5])
    if order_of_accuracy == 4:
        return np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    raise ValidationFailure(f"unsupported discretization order {order_of_accuracy}; use 2 or 4")


def one_sided_first_derivative(values: np.ndarray, h: float, at_end: bool = True) -> complex:
    """Fourth-order one-sided derivative from the last (or first) five samples."""
    weights = integer_stencil((-4, -3, -2, -1, 0), 1)
    if at_end:
        return np.dot(weights, values[-5:]) / h
    return -np.dot(weights[::-1], values[:5]) / h
