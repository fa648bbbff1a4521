"""
加權範數模組 - 𝓛𝓔、𝓛𝓔* 與 Z^{n,q} 的徑向離散化

L² integrals use the three-dimensional measure 4πr²dr. Profiles are
integrated with Gauss–Legendre panels per annulus; sampled fields use
Simpson's rule on the grid nodes inside each annulus.
"""
from typing import Optional, Union

import numpy as np
from scipy.integrate import simpson

from utils.common.errors import ValidationFailure
from utils.numerics.grid import Grid1D
from utils.numerics.quadrature import gauss_nodes
from utils.radial.cutoffs import DyadicAnnulus, japanese_bracket
from utils.radial.profiles import RadialProfile

NORMS = ("LE", "LE*", "Z")

Field = Union[RadialProfile, np.ndarray]


def covered_annuli(extent: float) -> int:
    """Largest m with A_m fully inside [0, extent]."""
    if extent < 2.0:
        raise ValidationFailure(f"grid extent {extent} does not cover annulus A_0")
    return int(np.floor(np.log2(extent))) - 1


def _annulus_l2_squared_profile(values_fn, m: int, panels: int = 8) -> float:
    lo, hi = DyadicAnnulus(m).radial_bounds()
    edges = np.linspace(lo, hi, panels + 1)
    x, w = gauss_nodes(edges[:-1], edges[1:])
    return float(np.sum(w * values_fn(x) * 4.0 * np.pi * x * x))


def _annulus_l2_squared_samples(r: np.ndarray, density: np.ndarray, m: int) -> float:
    lo, hi = DyadicAnnulus(m).radial_bounds()
    mask = (r >= lo) & (r <= hi)
    if np.count_nonzero(mask) < 3:
        raise ValidationFailure(f"annulus A_{m} holds fewer than 3 grid nodes")
    rr = r[mask]
    return float(simpson(density[mask] * 4.0 * np.pi * rr * rr, x=rr))


def _field_derivative(r: np.ndarray, values: np.ndarray, order: int) -> np.ndarray:
    out = np.asarray(values)
    for _ in range(order):
        out = np.gradient(out, r, edge_order=2)
    return out


def _weighted_terms(f: Field, r: Optional[np.ndarray], norm: str, m_max: int, weight_power: float,
                    derivative_fn) -> np.ndarray:
    terms = np.zeros(m_max + 1)
    exponent = -1.0 if norm == "LE" else 1.0
    for m in range(m_max + 1):
        if isinstance(f, RadialProfile):
            def density(x):
                v = derivative_fn(x)
                return japanese_bracket(x) ** (exponent + 2 * weight_power) * np.abs(v) ** 2
            terms[m] = np.sqrt(max(_annulus_l2_squared_profile(density, m), 0.0))
        else:
            v = derivative_fn(r)
            dens = japanese_bracket(r) ** (exponent + 2 * weight_power) * np.abs(v) ** 2
            terms[m] = np.sqrt(max(_annulus_l2_squared_samples(r, dens, m), 0.0))
    return terms


def eval_weighted_norm(f: Field, norm: str, grid: Union[Grid1D, np.ndarray], n: int = 0, q: float = 0.0,
                       m_max: Optional[int] = None) -> float:
    """
    計算徑向場的加權範數

    Args:
        f: RadialProfile 或在 grid 上取樣的陣列
        norm: "LE"（環形上確界）、"LE*"（環形求和）或 "Z"（Z^{n,q}）
        grid: Grid1D 或取樣半徑陣列
        n: Z 範數的導數階數
        q: Z 範數的權重指數
        m_max: 最外層環形（預設為網格覆蓋的最大值）

    Returns:
        float: 離散範數

    Raises:
        ValidationFailure: 網格未覆蓋所需環形
    """
    if norm not in NORMS:
        raise ValidationFailure(f"unknown norm '{norm}', expected one of {NORMS}")
    r = grid.nodes if isinstance(grid, Grid1D) else np.asarray(grid, dtype=float)
    available = covered_annuli(float(r[-1]))
    if m_max is None:
        m_max = available
    if m_max > available:
        raise ValidationFailure(f"grid extent {r[-1]} covers annuli up to {available}, requested {m_max}")
    if not isinstance(f, RadialProfile) and np.shape(f) != np.shape(r):
        raise ValidationFailure("sampled field does not match the grid")

    if norm in ("LE", "LE*"):
        terms = _weighted_terms(f, r, norm, m_max, 0.0,
                                (lambda x: f.sample(x)) if isinstance(f, RadialProfile) else (lambda x: f))
        return float(np.max(terms) if norm == "LE" else np.sum(terms))

    # Z^{n,q}: T ↦ ∂_r, S_r = r∂_r; rotations annihilate radial fields
    best = 0.0
    for i in range(n + 1):
        for k in range(n + 1 - i):
            def vector_field(x, i=i, k=k):
                if isinstance(f, RadialProfile):
                    if k == 0:
                        return f.sample(x, i)
                    # (r∂_r)^k ∂_r^i via the Euler-operator expansion for k ≤ 2
                    if k == 1:
                        return x * f.sample(x, i + 1)
                    if k == 2:
                        return x * f.sample(x, i + 1) + x * x * f.sample(x, i + 2)
                    raise ValidationFailure("Z norms support at most two scaling derivatives")
                values = _field_derivative(x, f, i)
                for _ in range(k):
                    values = x * _field_derivative(x, values, 1)
                return values
            terms = _weighted_terms(f, r, "LE*", m_max, q, vector_field)
            best = max(best, float(np.sum(terms)))
    return best
