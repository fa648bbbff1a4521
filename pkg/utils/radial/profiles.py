"""
徑向剖面模組 - 可求導的徑向函數及其符號類宣告

A RadialProfile wraps a vectorized function of r ≥ 0. Derivatives come from
closed forms when the constructor supplies them and otherwise from the
nine-point central differences in utils.numerics.stencils. Negative arguments
are reflected through r = 0 with the profile's parity, which keeps stencils
centred at the origin well defined.
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from utils.common.errors import ValidationFailure
from utils.common.logging_utils import get_logger
from utils.numerics.stencils import central_derivative
from utils.radial.cutoffs import chi_above, chi_below, japanese_bracket

# 配置日誌
logger = get_logger("profiles")

SYMBOL_KINDS = ("S", "l1S", "S_rad", "S_log")

Func = Callable[[np.ndarray], np.ndarray]
Number = Union[int, float]


@dataclass(frozen=True)
class SymbolClass:
    """
    符號類宣告 S(r^q)、ℓ¹S(r^q)、S_rad(r^q) 或 S(log r)

    Args:
        kind: 類別名稱
        q: 衰減指數（S_log 時忽略）
    """

    kind: str
    q: float = 0.0

    def __post_init__(self):
        if self.kind not in SYMBOL_KINDS:
            raise ValidationFailure(f"unknown symbol class '{self.kind}', expected one of {SYMBOL_KINDS}")

    @property
    def summable(self) -> bool:
        return self.kind == "l1S"

    def __str__(self) -> str:
        if self.kind == "S_log":
            return "S(log r)"
        label = {"S": "S", "l1S": "l1S", "S_rad": "S_rad"}[self.kind]
        return f"{label}(r^{self.q:g})"


class RadialProfile:
    """
    徑向剖面

    Args:
        func: vectorized map r ↦ value on r ≥ 0
        max_order: highest derivative order the profile promises
        derivatives: optional closed-form derivatives {j: func_j}
        claimed: claimed symbol class
        support_hint: optional (a, b) interval containing the support
        parity: +1 for even, −1 for odd extension through r = 0
        length_scale: variation scale used to size finite-difference steps
        name: label for logs and CSV headers
        fine_extent: radius past which length_scale stops capping the steps
    """

    def __init__(
        self,
        func: Func,
        max_order: int = 4,
        derivatives: Optional[Dict[int, Func]] = None,
        claimed: Optional[SymbolClass] = None,
        support_hint: Optional[Tuple[float, float]] = None,
        parity: int = 1,
        length_scale: float = np.inf,
        name: str = "profile",
        fine_extent: float = np.inf,
    ):
        if parity not in (1, -1):
            raise ValidationFailure(f"parity must be +1 or -1, got {parity}")
        self._func = func
        self.max_order = max_order
        self._derivatives = dict(derivatives or {})
        self.claimed = claimed
        self.support_hint = support_hint
        self.parity = parity
        self.length_scale = length_scale
        self.name = name
        self.fine_extent = fine_extent

    def __repr__(self) -> str:
        return f"RadialProfile(name={self.name!r}, claimed={self.claimed}, max_order={self.max_order})"

    def _reflect(self, func: Func, sign: int) -> Func:
        def extended(r):
            r = np.asarray(r, dtype=float)
            value = np.asarray(func(np.abs(r)), dtype=float)
            if sign == 1:
                return value
            return np.where(r < 0, -value, value)
        return extended

    def eval(self, r):
        """Value at r; negative r is reflected with the profile parity."""
        scalar = np.ndim(r) == 0
        value = self._reflect(self._func, self.parity)(np.asarray(r, dtype=float))
        value = np.broadcast_to(value, np.shape(r)).astype(float)
        return float(value) if scalar else value

    __call__ = eval

    def deriv(self, j: int, r):
        """
        j-th radial derivative

        Raises:
            ValidationFailure: j exceeds max_order
        """
        if j < 0:
            raise ValidationFailure(f"derivative order must be >= 0, got {j}")
        if j == 0:
            return self.eval(r)
        if j > self.max_order:
            raise ValidationFailure(f"profile '{self.name}' supports derivatives up to {self.max_order}, requested {j}")
        scalar = np.ndim(r) == 0
        rr = np.asarray(r, dtype=float)
        base_order = max([k for k in self._derivatives if k <= j], default=0)
        if base_order == 0:
            base = self._reflect(self._func, self.parity)
        else:
            base = self._reflect(self._derivatives[base_order], self.parity * (-1) ** base_order)
        if base_order == j:
            value = base(rr)
        else:
            value = central_derivative(base, rr, j - base_order, self.length_scale, self.fine_extent)
        value = np.broadcast_to(value, rr.shape).astype(float)
        return float(value) if scalar else value

    def sample(self, r: np.ndarray, j: int = 0) -> np.ndarray:
        return np.asarray(self.deriv(j, np.asarray(r, dtype=float)), dtype=float)

    def with_claim(self, claimed: SymbolClass) -> "RadialProfile":
        return RadialProfile(self._func, self.max_order, self._derivatives, claimed,
                             self.support_hint, self.parity, self.length_scale, self.name, self.fine_extent)

    def renamed(self, name: str) -> "RadialProfile":
        return RadialProfile(self._func, self.max_order, self._derivatives, self.claimed,
                             self.support_hint, self.parity, self.length_scale, name, self.fine_extent)

    # 算術運算
    def _combine(self, other, op: str) -> "RadialProfile":
        if isinstance(other, RadialProfile):
            f, g = self.eval, other.eval
            order = min(self.max_order, other.max_order)
            parity = self.parity * other.parity if op in ("*", "/") else self.parity
            if op in ("+", "-") and self.parity != other.parity:
                raise ValidationFailure("cannot add profiles of opposite parity")
            scale = min(self.length_scale, other.length_scale)
            fine = max([p.fine_extent for p in (self, other) if np.isfinite(p.length_scale)], default=np.inf)
            name = f"({self.name}{op}{other.name})"
            derivatives = {}
            if op in ("+", "-"):
                sign = 1.0 if op == "+" else -1.0
                for k in set(self._derivatives) & set(other._derivatives):
                    derivatives[k] = (lambda a, b: lambda r: a(r) + sign * b(r))(self._derivatives[k], other._derivatives[k])
            ops = {
                "+": lambda r: f(r) + g(r),
                "-": lambda r: f(r) - g(r),
                "*": lambda r: f(r) * g(r),
                "/": lambda r: f(r) / g(r),
            }
            return RadialProfile(ops[op], order, derivatives, None, None, parity, scale, name, fine)
        c = float(other)
        f = self.eval
        if op == "*":
            derivatives = {k: (lambda d: lambda r: c * d(r))(d) for k, d in self._derivatives.items()}
            return RadialProfile(lambda r: c * f(r), self.max_order, derivatives, self.claimed,
                                 self.support_hint, self.parity, self.length_scale, f"{c:g}*{self.name}",
                                 self.fine_extent)
        if op == "/":
            return self._combine(1.0 / c, "*")
        if op in ("+", "-"):
            if self.parity == -1 and c != 0.0:
                raise ValidationFailure("cannot add a constant to an odd profile")
            shift = c if op == "+" else -c
            return RadialProfile(lambda r: f(r) + shift, self.max_order, self._derivatives, None,
                                 None, self.parity, self.length_scale, f"({self.name}{op}{c:g})",
                                 self.fine_extent)
        raise ValidationFailure(f"unsupported operation {op}")

    def __add__(self, other):
        return self._combine(other, "+")

    def __radd__(self, other):
        return self._combine(other, "+")

    def __sub__(self, other):
        return self._combine(other, "-")

    def __rsub__(self, other):
        return (-self)._combine(other, "+")

    def __mul__(self, other):
        return self._combine(other, "*")

    def __rmul__(self, other):
        return self._combine(other, "*")

    def __truediv__(self, other):
        return self._combine(other, "/")

    def __neg__(self):
        return self._combine(-1.0, "*")

    def apply(self, fn: Callable[[np.ndarray], np.ndarray], name: Optional[str] = None) -> "RadialProfile":
        """Pointwise composition fn(f(r)); the result is even when f is."""
        f = self.eval
        return RadialProfile(lambda r: fn(f(r)), self.max_order, None, None, self.support_hint,
                             self.parity, self.length_scale, name or f"fn({self.name})", self.fine_extent)


def from_function(func: Func, name: str, claimed: Optional[SymbolClass] = None, **kwargs) -> RadialProfile:
    return RadialProfile(func, claimed=claimed, name=name, **kwargs)


def zero(name: str = "zero") -> RadialProfile:
    return RadialProfile(lambda r: np.zeros_like(np.asarray(r, dtype=float)), max_order=6,
                         derivatives={k: (lambda r: np.zeros_like(np.asarray(r, dtype=float))) for k in range(1, 7)},
                         claimed=SymbolClass("S_rad", -np.inf), name=name)


def constant(value: float, name: str = "const") -> RadialProfile:
    return RadialProfile(lambda r: np.full_like(np.asarray(r, dtype=float), value), max_order=6,
                         derivatives={k: (lambda r: np.zeros_like(np.asarray(r, dtype=float))) for k in range(1, 7)},
                         claimed=SymbolClass("S", 0.0), name=name)


def bracket_power(q: float, amplitude: float = 1.0, cutoff_scale: Optional[float] = None,
                  name: Optional[str] = None) -> RadialProfile:
    """
    amplitude·⟨r⟩^q，可選乘上 χ_{>1}(r/cutoff_scale)

    Args:
        q: 指數
        amplitude: 振幅
        cutoff_scale: 若給定，在 r < cutoff_scale 處截斷
    """
    def func(r):
        value = amplitude * japanese_bracket(np.asarray(r, dtype=float)) ** q
        if cutoff_scale is not None:
            value = value * chi_above(np.asarray(r, dtype=float) / cutoff_scale, 1.0)
        return value

    label = name or (f"{amplitude:g}<r>^{q:g}" + (f"chi(r/{cutoff_scale:g})" if cutoff_scale else ""))
    support = (cutoff_scale, np.inf) if cutoff_scale else None
    return RadialProfile(func, max_order=6, claimed=SymbolClass("S_rad", q), support_hint=support, name=label)


def log_bracket(amplitude: float = 1.0) -> RadialProfile:
    """amplitude·log⟨r⟩."""
    return RadialProfile(lambda r: amplitude * np.log(japanese_bracket(np.asarray(r, dtype=float))),
                         max_order=6, claimed=SymbolClass("S_log"), name="log<r>")


def gaussian(center: float = 0.0, width: float = 1.0, amplitude: float = 1.0,
             odd: bool = False, name: Optional[str] = None) -> RadialProfile:
    """
    高斯脈衝 amplitude·exp(−(r−center)²/(2·width²))；odd=True 時乘以 r 並取奇延拓
    """
    if width <= 0:
        raise ValidationFailure(f"gaussian width must be positive, got {width}")

    def func(r):
        r = np.asarray(r, dtype=float)
        value = amplitude * np.exp(-0.5 * ((r - center) / width) ** 2)
        return r * value if odd else value

    hint = (max(center - 12 * width, 0.0), center + 12 * width)
    return RadialProfile(func, max_order=6, claimed=SymbolClass("S_rad", -np.inf), support_hint=hint,
                         parity=-1 if odd else 1, length_scale=width,
                         name=name or f"gauss({center:g},{width:g})")


def bump(a: float, b: float, amplitude: float = 1.0, name: Optional[str] = None) -> RadialProfile:
    """
    光滑緊支撐凸塊，支撐於 (a, b)，最大值為 amplitude

    Difference steps are capped at an eighth of the half-width out to r = 2b; the
    edges flatten much faster than the half-width suggests.
    """
    if not 0 <= a < b:
        raise ValidationFailure(f"bump support must satisfy 0 <= a < b, got ({a}, {b})")
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)

    def func(r):
        r = np.asarray(r, dtype=float)
        x = (r - mid) / half
        inside = np.abs(x) < 1.0
        value = np.zeros_like(x)
        value[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
        return value

    return RadialProfile(func, max_order=6, claimed=SymbolClass("S_rad", -np.inf), support_hint=(a, b),
                         length_scale=half / 8.0, name=name or f"bump({a:g},{b:g})", fine_extent=2.0 * b)


def plateau(a: float, b: float, amplitude: float = 1.0) -> RadialProfile:
    """amplitude on [a, b], smoothly switched off on [a/2, a] and [b, 2b] (a = 0 allowed)."""
    def func(r):
        r = np.asarray(r, dtype=float)
        lower = np.ones_like(r) if a == 0 else chi_above(r, a / 2.0)
        return amplitude * lower * chi_below(r, b)

    return RadialProfile(func, max_order=6, claimed=SymbolClass("S_rad", -np.inf),
                         support_hint=(a / 2.0, 2.0 * b), name=f"plateau({a:g},{b:g})")


def step_ball(radius: float, amplitude: float) -> RadialProfile:
    """Discontinuous indicator amplitude·1_{r<radius}; derivatives are not meaningful."""
    return RadialProfile(lambda r: np.where(np.abs(np.asarray(r, dtype=float)) < radius, amplitude, 0.0),
                         max_order=0, claimed=SymbolClass("S_rad", -np.inf), support_hint=(0.0, radius),
                         name=f"ball({radius:g})")


def from_table(r: np.ndarray, values: np.ndarray, derivative_columns: Optional[Dict[int, np.ndarray]] = None,
               name: str = "table", claimed: Optional[SymbolClass] = None) -> RadialProfile:
    """
    由取樣表建立剖面（三次樣條插值，超出範圍時取端點值）

    Args:
        r: 遞增的半徑
        values: 取樣值
        derivative_columns: 可選的導數欄 {j: values_j}
    """
    r = np.asarray(r, dtype=float)
    values = np.asarray(values, dtype=float)
    if r.ndim != 1 or len(r) < 4 or np.any(np.diff(r) <= 0):
        raise ValidationFailure("profile table needs at least 4 strictly increasing radii")
    spline = CubicSpline(r, values, bc_type="natural")
    lo, hi = r[0], r[-1]

    def make(s):
        return lambda x: s(np.clip(np.asarray(x, dtype=float), lo, hi))

    derivatives = {}
    for j, column in (derivative_columns or {}).items():
        derivatives[j] = make(CubicSpline(r, np.asarray(column, dtype=float), bc_type="natural"))
    spacing = float(np.min(np.diff(r)))
    return RadialProfile(make(spline), max_order=4, derivatives=derivatives, claimed=claimed,
                         support_hint=(lo, hi), length_scale=max(8 * spacing, 1e-3), name=name)


def from_csv(path: str, name: Optional[str] = None) -> RadialProfile:
    """
    從 CSV 讀取剖面，欄位為 r, value[, d1, d2, ...]
    """
    frame = pd.read_csv(path, comment="#")
    missing = {"r", "value"} - set(frame.columns)
    if missing:
        raise ValidationFailure(f"profile CSV {path} lacks columns {sorted(missing)}")
    derivs = {}
    for column in frame.columns:
        if column.startswith("d") and column[1:].isdigit():
            derivs[int(column[1:])] = frame[column].to_numpy()
    logger.info(f"Loaded profile table {path} with {len(frame)} rows and derivative columns {sorted(derivs)}")
    return from_table(frame["r"].to_numpy(), frame["value"].to_numpy(), derivs, name=name or path)
