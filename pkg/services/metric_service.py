"""
度規服務模組 - 漸近平坦穩態度規的定義、假設檢驗與座標正規化
"""
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from utils.common.errors import NumericalFailure, ValidationFailure
from utils.common.logging_utils import get_logger
from utils.numerics.grid import composite_nodes
from utils.numerics.quadrature import CumulativeIntegral, panel_edges
from utils.radial import profiles as prof
from utils.radial.cutoffs import chi_above
from utils.radial.profiles import RadialProfile, SymbolClass
from utils.radial.seminorms import SeminormReport, estimate_seminorms

# 配置日誌
logger = get_logger("metric_service")

F_KEYS = ("tt", "tr", "rr", "ww")
H_KEYS = ("h_tt", "h_tr", "h_rr", "h_ww")
PRESETS = ("flat", "price_k1", "family_k2", "family_k3", "family_k4", "custom")

# 正規化殘差容許值
NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class MetricSpec:
    """
    度規規格：對偶分量 g^{αβ} = m^{αβ} + f^{αβ} + h^{αβ} 的徑向描述

    Args:
        kappa: 衰減率 κ
        h_tt, h_tr, h_rr, h_ww: 徑向對偶分量 h^{tt}, h^{tr}, h^{rr}, h^{ωω}
        f_dual: 球面上為常數的 f 分量 {"tt", "tr", "rr", "ww"}
        V_r: 徑向位勢
        V_l: 可選的 ℓ¹S 位勢
    """

    kappa: int
    h_tt: RadialProfile = field(default_factory=prof.zero)
    h_tr: RadialProfile = field(default_factory=prof.zero)
    h_rr: RadialProfile = field(default_factory=prof.zero)
    h_ww: RadialProfile = field(default_factory=prof.zero)
    f_dual: Dict[str, RadialProfile] = field(default_factory=dict)
    V_r: RadialProfile = field(default_factory=prof.zero)
    V_l: Optional[RadialProfile] = None
    name: str = "custom"

    def __post_init__(self):
        if self.kappa < 1:
            raise ValidationFailure(f"falloff rate kappa must be >= 1, got {self.kappa}")
        unknown = set(self.f_dual) - set(F_KEYS)
        if unknown:
            raise ValidationFailure(f"f_dual components must be among {F_KEYS}, got {sorted(unknown)}")

    def f(self, key: str) -> RadialProfile:
        return self.f_dual.get(key) or prof.zero(f"f_{key}")

    def components(self) -> Tuple[RadialProfile, ...]:
        extra = () if self.V_l is None else (self.V_l,)
        return (self.h_tt, self.h_tr, self.h_rr, self.h_ww, *self.f_dual.values(), self.V_r, *extra)

    def variation_scale(self) -> Tuple[float, float]:
        """(shortest length_scale, widest fine_extent among the finite ones) over all components."""
        finite = [p for p in self.components() if np.isfinite(p.length_scale)]
        if not finite:
            return np.inf, np.inf
        return min(p.length_scale for p in finite), max(p.fine_extent for p in finite)

    def potential(self) -> RadialProfile:
        return self.V_r if self.V_l is None else self.V_r + self.V_l

    def radial_block(self, r: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(g^{tt}, g^{tr}, g^{rr}, 1 + f^{ωω} + h^{ωω}) sampled at r."""
        r = np.asarray(r, dtype=float)
        gtt = -1.0 + self.f("tt").sample(r) + self.h_tt.sample(r)
        gtr = self.f("tr").sample(r) + self.h_tr.sample(r)
        grr = 1.0 + self.f("rr").sample(r) + self.h_rr.sample(r)
        gww = 1.0 + self.f("ww").sample(r) + self.h_ww.sample(r)
        return gtt, gtr, grr, gww

    def scaled(self, s: float) -> "MetricSpec":
        """All perturbations multiplied by s (flat-limit studies)."""
        return replace(
            self,
            h_tt=s * self.h_tt, h_tr=s * self.h_tr, h_rr=s * self.h_rr, h_ww=s * self.h_ww,
            f_dual={k: s * v for k, v in self.f_dual.items()},
            V_r=s * self.V_r, V_l=None if self.V_l is None else s * self.V_l,
        )


@dataclass(frozen=True)
class NormalizedMetric(MetricSpec):
    """
    正規化度規：h^{tr} ≡ 0、h^{rr} = −h^{tt}，所有分量以 ρ 為徑向座標

    Attributes:
        Q: 時間平移 T = t + Q(r)
        rho_of_r: 徑向重參數化 ρ(r)
        r_of_rho: 反映射 r(ρ)
        cutoff_radius: 截斷半徑 R
        matching_shift: 面積半徑匹配常數 ∫(J − 1)
    """

    Q: Optional[RadialProfile] = None
    rho_of_r: Optional[RadialProfile] = None
    r_of_rho: Optional[RadialProfile] = None
    cutoff_radius: float = 0.0
    matching_shift: float = 0.0
    extent: float = 0.0


@dataclass
class AssumptionReport:
    """度規假設檢驗報告"""

    stationary: bool
    spacelike_slices: bool
    signature: Tuple[int, int]
    falloff: Dict[str, bool]
    seminorms: Dict[str, SeminormReport] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.stationary and self.spacelike_slices and all(self.falloff.values())

    def summary(self) -> Dict[str, object]:
        return {
            "stationary": self.stationary,
            "spacelike_slices": self.spacelike_slices,
            "signature": list(self.signature),
            "falloff": dict(self.falloff),
            "passed": self.passed,
        }


def build_preset(name: str, kappa: Optional[int] = None, epsilon: float = 0.05, mass: float = 0.1,
                 cutoff_scale: float = 4.0, profile_dir: Optional[str] = None) -> MetricSpec:
    """
    依名稱建立度規預設

    Args:
        name: "flat"、"price_k1"、"family_k{2,3,4}" 或 "custom"
        kappa: family 預設的衰減率（預設取名稱中的數字）
        epsilon: family 振幅 ε
        mass: price_k1 的質量參數 M
        cutoff_scale: 內部截斷 χ_{>1}(r/cutoff_scale)
        profile_dir: custom 預設的 CSV 目錄（h_tt.csv 等）

    Returns:
        MetricSpec: 度規規格
    """
    if name not in PRESETS:
        raise ValidationFailure(f"unknown metric preset '{name}', expected one of {PRESETS}")
    if name == "flat":
        return MetricSpec(kappa=kappa or 2, name="flat")
    if name == "price_k1":
        h_tt = prof.bracket_power(-1.0, amplitude=-2.0 * mass, cutoff_scale=cutoff_scale, name="h_tt")
        return MetricSpec(kappa=1, h_tt=h_tt, name="price_k1")
    if name.startswith("family_k"):
        k = kappa or int(name[-1])
        h_tt = prof.bracket_power(-float(k), amplitude=-epsilon, cutoff_scale=cutoff_scale, name="h_tt")
        return MetricSpec(kappa=k, h_tt=h_tt, name=name)
    if profile_dir is None:
        raise ValidationFailure("custom metric preset requires metric.profile_dir")
    return load_custom(profile_dir, kappa or 2)


def load_custom(profile_dir: str, kappa: int) -> MetricSpec:
    """Read h_*.csv, f_*.csv and V_r.csv profiles from a directory; missing files mean zero."""
    def read(stem):
        path = os.path.join(profile_dir, f"{stem}.csv")
        return prof.from_csv(path, name=stem) if os.path.exists(path) else None

    h = {key: read(key) for key in H_KEYS}
    f_dual = {k: p for k in F_KEYS if (p := read(f"f_{k}")) is not None}
    kwargs = {key: value for key, value in h.items() if value is not None}
    v_r = read("V_r")
    if v_r is not None:
        kwargs["V_r"] = v_r
    logger.info(f"Loaded custom metric from {profile_dir}: components {sorted(kwargs)} f={sorted(f_dual)}")
    return MetricSpec(kappa=kappa, f_dual=f_dual, name="custom", **kwargs)


class MetricService:
    """度規服務：假設檢驗、對偶矩陣組裝與徑向座標正規化"""

    def __init__(self, extent: float = 4096.0, m_max: int = 8, j_max: int = 2, match_areal_radius: bool = True):
        """
        初始化度規服務

        Args:
            extent: 正規化求積與取樣的外半徑
            m_max: 衰減檢驗的最外層環形
            j_max: 衰減檢驗的最高導數階數
            match_areal_radius: κ ≥ 2 時令 ρ − r → 0
        """
        if extent < 2.0 ** (m_max + 1):
            raise ValidationFailure(f"metric extent {extent} must cover annulus {m_max}")
        self.extent = float(extent)
        self.m_max = m_max
        self.j_max = j_max
        self.match_areal_radius = match_areal_radius
        logger.info(f"Metric service initialized with extent={self.extent}, m_max={m_max}")

    # 對偶矩陣
    def dual_components(self, spec: MetricSpec, r: float, theta: float) -> np.ndarray:
        """
        在 (r, θ) 組裝球座標下的 4×4 對偶矩陣

        Raises:
            NumericalFailure: 矩陣奇異
        """
        matrices = self._dual_batch(spec, np.array([r], dtype=float), theta)
        return matrices[0]

    def _dual_batch(self, spec: MetricSpec, r: np.ndarray, theta: float) -> np.ndarray:
        if np.any(r <= 0) or abs(np.sin(theta)) < 1e-300:
            raise NumericalFailure(f"dual metric singular at r={r.min()}, theta={theta}")
        gtt, gtr, grr, gww = spec.radial_block(r)
        G = np.zeros((len(r), 4, 4))
        G[:, 0, 0] = gtt
        G[:, 0, 1] = G[:, 1, 0] = gtr
        G[:, 1, 1] = grr
        G[:, 2, 2] = gww / r ** 2
        G[:, 3, 3] = gww / (r ** 2 * np.sin(theta) ** 2)
        det2 = gtt * grr - gtr ** 2
        bad = (np.abs(det2) < 1e-14) | (np.abs(gww) < 1e-14)
        if np.any(bad):
            where = float(r[np.argmax(bad)])
            logger.error(f"Metric not invertible at r={where}")
            raise NumericalFailure(f"metric not invertible at r={where}")
        return G

    # 假設檢驗
    def sample_radii(self) -> np.ndarray:
        nodes = composite_nodes(self.extent, per_annulus=64)
        return nodes[nodes > 0]

    def check_assumptions(self, spec: MetricSpec) -> AssumptionReport:
        """
        檢驗度規假設：穩態、空間切片類空、分量衰減

        Returns:
            AssumptionReport: 檢驗報告
        """
        r = self.sample_radii()
        G = self._dual_batch(spec, r, 0.5 * np.pi)
        primal = np.linalg.inv(G)
        spatial = np.linalg.eigvalsh(primal[:, 1:, 1:])
        spacelike = bool(np.all(spatial > 0))
        signature = self.signature(primal)

        claims = {
            "h_tt": SymbolClass("S_rad", -spec.kappa),
            "h_tr": SymbolClass("S_rad", -spec.kappa),
            "h_rr": SymbolClass("S_rad", -spec.kappa),
            "h_ww": SymbolClass("S_rad", -spec.kappa),
            "V_r": SymbolClass("S_rad", -spec.kappa - 2),
        }
        profiles = {key: getattr(spec, key) for key in claims}
        for key in F_KEYS:
            if key in spec.f_dual:
                claims[f"f_{key}"] = SymbolClass("l1S", -spec.kappa)
                profiles[f"f_{key}"] = spec.f_dual[key]
        if spec.V_l is not None:
            claims["V_l"] = SymbolClass("l1S", -spec.kappa - 2)
            profiles["V_l"] = spec.V_l

        reports = {}
        for key, claimed in claims.items():
            reports[key] = estimate_seminorms(profiles[key], claimed, self.m_max, self.j_max)
        falloff = {key: report.consistent for key, report in reports.items()}
        report = AssumptionReport(True, spacelike, signature, falloff, reports)
        if report.passed:
            logger.info(f"Metric '{spec.name}' passed all assumption checks")
        else:
            logger.warning(f"Metric '{spec.name}' failed checks: spacelike={spacelike}, falloff={falloff}")
        return report

    @staticmethod
    def signature(primal: np.ndarray) -> Tuple[int, int]:
        """(negative, positive) eigenvalue counts, required identical at every sampled point."""
        eig = np.linalg.eigvalsh(primal)
        neg = np.sum(eig < 0, axis=-1)
        pos = np.sum(eig > 0, axis=-1)
        if np.any(neg != neg.flat[0]) or np.any(pos != pos.flat[0]):
            return (-1, -1)
        return int(neg.flat[0]), int(pos.flat[0])

    # 正規化
    def select_cutoff_radius(self, spec: MetricSpec) -> float:
        """
        最小的 R 使 r > R 時 1 + h^{rr} ≥ 1/2 且 |h^{rt}/(1+h^{rr})| ≤ 1/4

        Raises:
            NumericalFailure: 在網格範圍一半以內找不到 R
        """
        r = composite_nodes(self.extent, per_annulus=64)
        denom = 1.0 + spec.h_rr.sample(r)
        ratio = np.abs(spec.h_tr.sample(r)) / np.where(denom > 0, denom, np.inf)
        good = (denom >= 0.5) & (ratio <= 0.25)
        # suffix-all: good at every node from i outward
        suffix_ok = np.flip(np.logical_and.accumulate(np.flip(good)))
        candidates = np.nonzero(suffix_ok)[0]
        if len(candidates) == 0 or r[candidates[0]] > 0.5 * self.extent:
            logger.error(f"No admissible cutoff radius for metric '{spec.name}'")
            raise NumericalFailure("denominator 1 + h^rr too small on r > R for every admissible R")
        return float(r[candidates[0]])

    def normalize(self, spec: MetricSpec) -> NormalizedMetric:
        """
        套用時間平移與徑向重參數化，使 h^{tr} = 0 且 h^{rr} = −h^{tt}

        Args:
            spec: 輸入度規

        Returns:
            NormalizedMetric: 以 ρ 為徑向座標的正規化度規

        Raises:
            NumericalFailure: 分母過小或 ρ(r) 非單調
        """
        R = self.select_cutoff_radius(spec)
        if R > 0:
            chi = lambda r: chi_above(np.abs(np.asarray(r, dtype=float)), R)
        else:
            chi = lambda r: np.ones_like(np.asarray(r, dtype=float))

        def q(r):
            return chi(r) * spec.h_tr(r) / (1.0 + spec.h_rr(r))

        def s(r):
            return chi(r) * (-spec.h_tt(r) - spec.h_rr(r)) / (1.0 + spec.h_rr(r))

        r_probe = composite_nodes(self.extent, per_annulus=64)
        if np.any(1.0 + s(r_probe) <= 0):
            raise NumericalFailure("radial reparametrization integrand 1 + s is not positive")

        def jac(r):
            return np.sqrt(1.0 + s(r))

        breaks = [R, 2 * R] if R > 0 else []
        edges = panel_edges(self.extent, breakpoints=breaks)
        Q_int = CumulativeIntegral(lambda r: -q(r), edges)

        shift = 0.0
        bump_profile = None
        if self.match_areal_radius and spec.kappa >= 2:
            excess = CumulativeIntegral(lambda r: jac(r) - 1.0, edges)
            tail = (float(jac(np.array([self.extent]))[0]) - 1.0) * self.extent / (spec.kappa - 1)
            shift = excess.total + tail
            if abs(shift) > 1e-14:
                width = max(4.0, 8.0 * abs(shift))
                unit = prof.bump(1.0, 1.0 + width)
                mass = CumulativeIntegral(unit.eval, panel_edges(2.0 + width, breakpoints=[1.0, 1.0 + width])).total
                bump_profile = unit * (1.0 / mass)
                edges = np.unique(np.concatenate([edges, [1.0, 1.0 + width]]))

        scale, fine = spec.variation_scale()
        if bump_profile is not None:
            fine = max(fine, bump_profile.fine_extent) if np.isfinite(scale) else bump_profile.fine_extent
            fine += abs(shift)
            scale = min(scale, bump_profile.length_scale)
        steps = {"length_scale": scale, "fine_extent": fine}

        def rho_prime(r):
            value = jac(r)
            if bump_profile is not None:
                value = value - shift * bump_profile.eval(r)
            return value

        if np.any(rho_prime(r_probe) <= 0):
            logger.error(f"Non-monotone rho_of_r for metric '{spec.name}'")
            raise NumericalFailure("non-monotone rho_of_r")
        far = r_probe[r_probe > 2 * max(R, 1.0) + 8.0]
        if far.size and (np.min(rho_prime(far)) < 0.5 or np.max(rho_prime(far)) > 2.0):
            raise NumericalFailure("rho_of_r derivative leaves [1/2, 2] at large r")

        rho_int = CumulativeIntegral(rho_prime, edges)
        rho_end = rho_int.total
        extent = self.extent

        def rho_value(r):
            r = np.asarray(r, dtype=float)
            inside = np.minimum(r, extent)
            value = rho_int(inside.ravel()).reshape(r.shape)
            return np.where(r > extent, rho_end + (r - extent), value)

        def q_value(r):
            r = np.asarray(r, dtype=float)
            inside = np.minimum(r, extent)
            return Q_int(inside.ravel()).reshape(r.shape) + np.where(r > extent, -q(extent) * (r - extent), 0.0)

        rho_of_r = RadialProfile(rho_value, max_order=4, derivatives={1: rho_prime}, parity=-1, name="rho_of_r",
                                 **steps)
        Q = RadialProfile(q_value, max_order=4, derivatives={1: lambda r: -q(r)}, name="Q", **steps)

        nodes = composite_nodes(extent, per_annulus=64)
        rho_nodes = rho_value(nodes)
        guess = PchipInterpolator(rho_nodes, nodes, extrapolate=True)

        def r_of_rho_value(rho):
            rho = np.asarray(rho, dtype=float)
            flat_shape = rho.shape
            target = rho.ravel()
            r = np.where(target > rho_end, extent + (target - rho_end), guess(np.minimum(target, rho_end)))
            for _ in range(3):
                r = r - (rho_value(r) - target) / rho_prime(r)
            return r.reshape(flat_shape)

        def r_of_rho_d1(rho):
            return 1.0 / rho_prime(r_of_rho_value(rho))

        def r_of_rho_d2(rho):
            r = r_of_rho_value(rho)
            return -rho_of_r.deriv(2, r) / rho_prime(r) ** 3

        r_of_rho = RadialProfile(r_of_rho_value, max_order=4, derivatives={1: r_of_rho_d1, 2: r_of_rho_d2},
                                 parity=-1, name="r_of_rho", **steps)

        def in_rho(fn, name):
            return RadialProfile(lambda rho: fn(r_of_rho_value(np.abs(np.asarray(rho, dtype=float)))),
                                 max_order=4, name=name, **steps)

        f_tt, f_tr, f_rr, f_ww = (spec.f(k) for k in F_KEYS)
        rho0 = float(rho_prime(np.array([0.0]))[0])

        def areal_ratio_sq(r):
            r = np.asarray(r, dtype=float)
            safe = np.where(r > 0, r, 1.0)
            return np.where(r > 0, (rho_value(safe) / safe) ** 2, rho0 ** 2)

        # T = t + Q(r) 之後的分量
        def new_f_tt(r):
            return f_tt(r) - 2.0 * q(r) * (f_tr(r) + spec.h_tr(r)) + q(r) ** 2 * (1.0 + f_rr(r) + spec.h_rr(r))

        def new_f_tr_T(r):
            return f_tr(r) - q(r) * f_rr(r) + (1.0 - chi(r)) * spec.h_tr(r)

        # ρ = ρ(r) 之後的分量
        def new_f_rhorho(r):
            # g^{ρρ} = ρ'² g^{rr}, with s·(1 + h^{rr}) = χ(−h^{tt} − h^{rr}) expanded exactly
            value = f_rr(r) + (1.0 - chi(r)) * (spec.h_rr(r) + spec.h_tt(r)) + s(r) * f_rr(r)
            if bump_profile is not None:
                correction = shift * bump_profile.eval(r)
                value = value - correction * (2.0 * jac(r) - correction) * (1.0 + f_rr(r) + spec.h_rr(r))
            return value

        def new_f_rhot(r):
            return rho_prime(r) * new_f_tr_T(r)

        def new_h_ww(r):
            return (1.0 + spec.h_ww(r)) * areal_ratio_sq(r) - 1.0

        def new_f_ww(r):
            return f_ww(r) * areal_ratio_sq(r)

        h_tt = in_rho(spec.h_tt.eval, "h_tt")
        f_new = {}
        probe_rho = rho_value(r_probe)
        for key, fn in (("tt", new_f_tt), ("tr", new_f_rhot), ("rr", new_f_rhorho), ("ww", new_f_ww)):
            candidate = in_rho(fn, f"f_{key}")
            if np.max(np.abs(candidate.sample(probe_rho))) > 0.0:
                f_new[key] = candidate

        normalized = NormalizedMetric(
            kappa=spec.kappa,
            h_tt=h_tt,
            h_tr=prof.zero("h_tr"),
            h_rr=(-h_tt).renamed("h_rr"),
            h_ww=in_rho(new_h_ww, "h_ww"),
            f_dual=f_new,
            V_r=in_rho(spec.V_r.eval, "V_r"),
            V_l=None if spec.V_l is None else in_rho(spec.V_l.eval, "V_l"),
            name=f"{spec.name}:normalized",
            Q=Q,
            rho_of_r=rho_of_r,
            r_of_rho=r_of_rho,
            cutoff_radius=R,
            matching_shift=shift,
            extent=float(rho_end),
        )
        logger.info(
            f"Normalized metric '{spec.name}': R={R}, matching_shift={shift:.3e}, "
            f"f components {sorted(f_new)}"
        )
        return normalized

    @staticmethod
    def normalization_residuals(nm: MetricSpec, r: np.ndarray) -> Dict[str, float]:
        """sup |h^{tr}| and sup |h^{rr} + h^{tt}| on r."""
        return {
            "h_tr": float(np.max(np.abs(nm.h_tr.sample(r)))),
            "h_rr_plus_h_tt": float(np.max(np.abs(nm.h_rr.sample(r) + nm.h_tt.sample(r)))),
        }
