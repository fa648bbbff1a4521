"""
截斷函數模組 - 日式括號、光滑截斷、二進環形分割與光滑最小值

All functions are vectorized over numpy arrays and return float64 values.
"""
from dataclasses import dataclass
from typing import Iterator, Tuple, Union

import numpy as np

from utils.common.errors import ValidationFailure

ArrayLike = Union[float, np.ndarray]


def _sigma(x: np.ndarray) -> np.ndarray:
    """exp(-1/x) for x > 0, else 0."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _as_array(r: ArrayLike) -> np.ndarray:
    return np.atleast_1d(np.asarray(r, dtype=float))


def _restore(value: np.ndarray, like: ArrayLike):
    if np.ndim(like) == 0:
        return float(value[0])
    return value


def chi_below(r: ArrayLike, scale: float = 1.0):
    """
    光滑截斷 χ_{<scale}：r ≤ scale 時為 1，r ≥ 2·scale 時為 0

    Args:
        r: 半徑（可為陣列）
        scale: 轉換起點

    Returns:
        截斷值，與輸入形狀一致
    """
    if scale <= 0:
        raise ValidationFailure(f"cutoff scale must be positive, got {scale}")
    rr = _as_array(r)
    x = 2.0 - rr / scale
    a = _sigma(x)
    b = _sigma(1.0 - x)
    value = a / (a + b)
    return _restore(value, r)


def chi_above(r: ArrayLike, scale: float = 1.0):
    """χ_{>scale} = 1 − χ_{<scale}."""
    return _restore(1.0 - _as_array(chi_below(r, scale)), r)


def chi_near(r: ArrayLike, scale: float = 1.0):
    """
    χ_{≈scale}: supported in [scale/2, 4·scale], equal to 1 on [scale, 2·scale].
    """
    rr = _as_array(r)
    value = _as_array(chi_above(rr, 0.5 * scale)) * _as_array(chi_below(rr, 2.0 * scale))
    return _restore(value, r)


def japanese_bracket(r: ArrayLike):
    """
    日式括號 ⟨r⟩ = b·r + (1−b)·√(1+r²)，b = χ_{>1}(r)

    Returns r exactly once r ≥ 2 and a value ≥ 1 everywhere.

    Raises:
        ValidationFailure: 輸入為負數
    """
    rr = _as_array(r)
    if np.any(rr < 0):
        raise ValidationFailure("japanese_bracket requires r >= 0")
    b = _as_array(chi_above(rr, 1.0))
    value = b * rr + (1.0 - b) * np.sqrt(1.0 + rr * rr)
    value = np.where(b == 1.0, rr, value)
    return _restore(value, r)


def quartic_bracket(r: ArrayLike):
    """Alternative bracket b·r + (1−b)·(1+r⁴)^{1/4}, also equal to r for r ≥ 2."""
    rr = _as_array(r)
    if np.any(rr < 0):
        raise ValidationFailure("quartic_bracket requires r >= 0")
    b = _as_array(chi_above(rr, 1.0))
    value = b * rr + (1.0 - b) * (1.0 + rr ** 4) ** 0.25
    value = np.where(b == 1.0, rr, value)
    return _restore(value, r)


def smooth_min(a: ArrayLike, b: ArrayLike):
    """
    光滑最小值 a ∧ b

    Equals min(a, b) exactly whenever a/b lies outside [1/2, 2]; symmetric by construction.

    Raises:
        ValidationFailure: 非正輸入
    """
    aa = _as_array(a)
    bb = _as_array(b)
    if np.any(aa <= 0) or np.any(bb <= 0):
        raise ValidationFailure("smooth_min requires positive arguments")

    def one_sided(x, y):
        ratio = x / y
        lo = _as_array(chi_below(ratio, 1.0))
        return lo * x + (1.0 - lo) * y

    value = 0.5 * (one_sided(aa, bb) + one_sided(bb, aa))
    exact = (aa / bb > 2.0) | (bb / aa > 2.0)
    value = np.where(exact, np.minimum(aa, bb), value)
    return _restore(value, a if np.ndim(a) >= np.ndim(b) else b)


@dataclass(frozen=True)
class DyadicAnnulus:
    """二進環形 A_m = {2^m ≤ ⟨r⟩ ≤ 2^{m+1}}"""

    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ValidationFailure(f"annulus index must be >= 0, got {self.m}")

    @property
    def bounds(self) -> Tuple[float, float]:
        return float(2 ** self.m), float(2 ** (self.m + 1))

    def radial_bounds(self) -> Tuple[float, float]:
        """Bounds in r; the inner bound of A_0 is r = 0 since ⟨0⟩ = 1."""
        lo, hi = self.bounds
        return (0.0 if self.m == 0 else lo), hi

    def contains(self, r: ArrayLike) -> np.ndarray:
        br = _as_array(japanese_bracket(r))
        lo, hi = self.bounds
        return (br >= lo) & (br <= hi)


def annuli(m_max: int) -> Iterator[DyadicAnnulus]:
    """Annuli A_0..A_{m_max}."""
    for m in range(m_max + 1):
        yield DyadicAnnulus(m)


def beta(m: int, r: ArrayLike):
    """
    二進單位分割 β_{≈m}

    β_0 = χ_{<2}(⟨r⟩), β_m = χ_{<2^{m+1}}(⟨r⟩) − χ_{<2^m}(⟨r⟩) for m ≥ 1, so Σ_m β_m = 1.
    """
    if m < 0:
        raise ValidationFailure(f"partition index must be >= 0, got {m}")
    br = _as_array(japanese_bracket(r))
    upper = _as_array(chi_below(br, 2.0 ** (m + 1)))
    if m == 0:
        return _restore(upper, r)
    lower = _as_array(chi_below(br, 2.0 ** m))
    return _restore(upper - lower, r)


def partition_sum(r: ArrayLike, m_max: int):
    """Σ_{m ≤ m_max} β_m(r), equal to 1 for ⟨r⟩ ≤ 2^{m_max+1}."""
    total = np.zeros_like(_as_array(r))
    for m in range(m_max + 1):
        total = total + _as_array(beta(m, r))
    return _restore(total, r)
