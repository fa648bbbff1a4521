"""
預解式服務模組 - 外行輻射條件下的 P_τ 求解、LE_τ 範數、低頻誤差掃描與逐點界

Fourier convention: û(τ) = ∫ e^{−itτ}u dt, so the outgoing branch behaves like
e^{−iτr} and the resolvent is defined for Im τ ≤ 0.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.sparse.linalg import splu

from services.operator_service import SOMMERFELD_THRESHOLD, DiscreteOperator, OperatorService, RadialOperator
from utils.common.errors import NumericalFailure, ValidationFailure
from utils.common.logging_utils import get_logger
from utils.numerics.grid import Grid1D
from utils.numerics.stencils import one_sided_first_derivative
from utils.radial import profiles as prof
from utils.radial.cutoffs import japanese_bracket
from utils.radial.norms import covered_annuli, eval_weighted_norm
from utils.radial.profiles import RadialProfile

# 配置日誌
logger = get_logger("resolvent_service")

Source = Union[RadialProfile, np.ndarray]

# 複數平移外推路徑（選用）：|τ|R < 8 時在 τ − iδ、τ − 2iδ 求解並外推 δ → 0
DAMPING_FACTOR = 4.0
SCAN_WINDOW = (2.0, 32.0)
BOUND_FACTOR = 3.0
LOG_TEMPLATE_COLUMNS = ["tau", "log_inv_tau", "residual_re", "residual_im", "template_re", "template_im"]


@dataclass
class ResolventSolution:
    """
    預解式解

    Attributes:
        tau: 頻率（Im τ ≤ 0）
        ell: 球諧指標
        r: 節點 r_1..r_N
        psi: ψ = rv
        v: 徑向場
        radiation_residual: |(∂_r + iτ)ψ(R)| / max|ψ|
        defect: ‖P_τψ − rg‖ / ‖rg‖ against the unshifted system at τ
        le_tau_norm: LE_τ 範數
        method: "direct" 或 "richardson"
        tolerance: 求解器的殘差容許值
        outgoing_amplitude: 邊界上 e^{iτr}ψ 的值
    """

    tau: complex
    ell: int
    r: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    radiation_residual: float
    defect: float
    le_tau_norm: float = 0.0
    method: str = "direct"
    outgoing_amplitude: complex = 0j
    tolerance: float = 1e-8

    @property
    def within_tolerance(self) -> bool:
        return self.defect <= self.tolerance

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"r": self.r, "v_re": self.v.real, "v_im": self.v.imag})


@dataclass
class LowFreqErrorReport:
    """
    低頻誤差報告 E(τ) = R_τg − (R_0 g)e^{−iτ⟨r⟩}

    Attributes:
        tau_grid: 實頻率
        error_norms: r ∈ [2, 32] 上的 sup|E|
        fitted_slope: 最低十倍頻上 log‖E‖ 對 log τ 的斜率
        epsilon_profile: λ = κ+1 時的對數模板診斷（否則為 None）
        log_fit_r2: 對數模板的決定係數
        flags: 非單調等警示
    """

    lam: int
    tau_grid: List[float]
    error_norms: List[float]
    fitted_slope: float
    radiation_residuals: List[float] = field(default_factory=list)
    le_tau_norms: List[float] = field(default_factory=list)
    epsilon_profile: Optional[pd.DataFrame] = None
    log_fit_r2: Optional[float] = None
    flags: List[str] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return "non-monotone error curve" not in self.flags

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "tau": self.tau_grid,
            "error_norm": self.error_norms,
            "radiation_residual": self.radiation_residuals,
            "le_tau_norm": self.le_tau_norms,
        })


def geometric_tau_grid(tau0: float, count: int) -> List[float]:
    """τ_k = 2^{−k/2}τ₀, k = 0..count−1, returned in increasing order."""
    if tau0 <= 0 or count < 2:
        raise ValidationFailure("geometric tau grid needs tau0 > 0 and at least two points")
    return sorted(float(tau0 * 2.0 ** (-k / 2.0)) for k in range(count))


def zlambda_source(lam: int, s: float = 0.5, bump_amplitude: float = 1.0) -> RadialProfile:
    """g = ⟨r⟩^{−λ−2−s}χ_{>1}(r/4) plus a compact bump on [1, 3]."""
    tail = prof.bracket_power(-(lam + 2 + s), amplitude=1.0, cutoff_scale=4.0)
    return (tail + prof.bump(1.0, 3.0, amplitude=bump_amplitude)).renamed(f"zsource(lambda={lam})")


def le_tau_norm(v: np.ndarray, tau: complex, grid: Union[Grid1D, np.ndarray]) -> float:
    """
    ‖(|τ| + ⟨r⟩^{-1})v‖_LE + ‖∇v‖_LE + ‖(|τ| + ⟨r⟩^{-1})^{-1}∇²v‖_LE

    Radial derivatives with |∇²v|² = v''² + 2(v'/r)². The field is sampled on r_1..r_N.
    """
    r = grid.nodes[1:] if isinstance(grid, Grid1D) else np.asarray(grid, dtype=float)
    v = np.asarray(v)
    if v.shape != r.shape:
        raise ValidationFailure("field and radii differ in shape")
    if not np.any(v):
        return 0.0
    weight = np.abs(tau) + 1.0 / japanese_bracket(r)
    dv = np.gradient(v, r, edge_order=2)
    d2v = np.gradient(dv, r, edge_order=2)
    hessian = np.sqrt(np.abs(d2v) ** 2 + 2.0 * np.abs(dv / r) ** 2)
    m_max = covered_annuli(float(r[-1]))
    return (eval_weighted_norm(weight * v, "LE", r, m_max=m_max)
            + eval_weighted_norm(np.abs(dv), "LE", r, m_max=m_max)
            + eval_weighted_norm(hessian / weight, "LE", r, m_max=m_max))


def _least_squares_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(x, y, 1)[0])


def fit_log_template(taus: np.ndarray, values: np.ndarray, kappa: int) -> Tuple[pd.DataFrame, float]:
    """
    對數模板擬合

    Removes Σ_{1≤k≤κ} a_kτ^k by least squares, then fits what is left with one
    constant times τ^κ·log(1/τ), projected off the same polynomials. The returned
    R² is the share of the remaining residual that this single template explains;
    a residual at round-off level gives R² = 0.

    Args:
        taus: 遞增的實頻率
        values: 固定半徑處的誤差值 E(τ)
        kappa: 度規衰減率

    Returns:
        (frame, r2)
    """
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=complex)
    L = np.log(1.0 / taus)
    template = (taus ** kappa * L).astype(complex)
    if len(taus) <= kappa + 1:
        logger.warning(f"Log template needs more than {kappa + 1} tau values, got {len(taus)}")
        return pd.DataFrame(columns=LOG_TEMPLATE_COLUMNS), float("nan")
    basis, _ = np.linalg.qr(np.column_stack([taus ** k for k in range(1, kappa + 1)]).astype(complex))
    residual = values - basis @ (basis.conj().T @ values)
    projected = template - basis @ (basis.conj().T @ template)
    amplitude = complex(np.vdot(projected, residual) / np.vdot(projected, projected))
    fitted = amplitude * projected
    total = float(np.sum(np.abs(residual) ** 2))
    if total <= (1e-12 * max(float(np.max(np.abs(values))), 1e-300)) ** 2 * len(taus):
        r2 = 0.0
    else:
        r2 = 1.0 - float(np.sum(np.abs(residual - fitted) ** 2)) / total
    frame = pd.DataFrame({
        "tau": taus,
        "log_inv_tau": L,
        "residual_re": residual.real,
        "residual_im": residual.imag,
        "template_re": fitted.real,
        "template_im": fitted.imag,
    }, columns=LOG_TEMPLATE_COLUMNS)
    return frame, r2


class ResolventService:
    """預解式服務：P_τ 的外行求解與頻域診斷"""

    def __init__(self, operator_service: OperatorService, tolerance: float = 1e-8, richardson: bool = False):
        self.operator_service = operator_service
        self.tolerance = tolerance
        self.richardson = richardson
        self._discrete: Dict[Tuple[int, float, float, int], Tuple[RadialOperator, DiscreteOperator]] = {}
        logger.info(f"Resolvent service initialized with tolerance={tolerance}")

    def discrete(self, rop: RadialOperator, grid: Grid1D) -> DiscreteOperator:
        key = (id(rop), grid.h, grid.r_max, grid.order)
        cached = self._discrete.get(key)
        if cached is None or cached[0] is not rop:
            cached = (rop, self.operator_service.assemble_discrete(rop, grid, None, "radiation"))
            self._discrete[key] = cached
        return cached[1]

    @staticmethod
    def _rhs(source: Source, radii: np.ndarray) -> np.ndarray:
        values = source.sample(radii) if isinstance(source, RadialProfile) else np.asarray(source)
        if values.shape != radii.shape:
            raise ValidationFailure("source samples do not match the grid nodes r_1..r_N")
        rhs = (radii * values).astype(complex)
        rhs[-1] = 0.0
        return rhs

    def _solve_psi(self, op: DiscreteOperator, tau: complex, rhs: np.ndarray) -> np.ndarray:
        try:
            psi = splu(op.matrix(tau)).solve(rhs)
        except RuntimeError as e:
            logger.error(f"Singular resolvent system at tau={tau}: {e}")
            raise NumericalFailure(f"singular discrete resolvent at tau={tau}") from e
        if not np.all(np.isfinite(psi)):
            raise NumericalFailure(f"non-finite resolvent solution at tau={tau}")
        return psi

    def _solve_path(self, op: DiscreteOperator, tau: complex, rhs: np.ndarray) -> Tuple[np.ndarray, str]:
        """Direct solve, or the opt-in damped two-point extrapolation when |τ|R < 8 (any ℓ)."""
        R = float(op.radii[-1])
        if self.richardson and tau != 0 and abs(tau) * R < SOMMERFELD_THRESHOLD:
            delta = DAMPING_FACTOR / R
            near = self._solve_psi(op, tau - 1j * delta, rhs)
            far = self._solve_psi(op, tau - 2j * delta, rhs)
            return 2.0 * near - far, "richardson"
        return self._solve_psi(op, tau, rhs), "direct"

    def solve_field(self, rop: RadialOperator, tau: complex, rhs: np.ndarray, grid: Grid1D) -> np.ndarray:
        """
        直接以 ψ 空間右端求解 P_τψ = rhs（最後一列為邊界列，須為 0）

        Returns:
            np.ndarray: ψ on r_1..r_N
        """
        tau = complex(tau)
        if tau.imag > 0:
            raise ValidationFailure(f"resolvent requires Im tau <= 0, got tau={tau}")
        op = self.discrete(rop, grid)
        rhs = np.asarray(rhs, dtype=complex)
        if rhs.shape != op.radii.shape:
            raise ValidationFailure("right-hand side does not match the grid nodes r_1..r_N")
        return self._solve_path(op, tau, rhs)[0]

    def solve_resolvent(self, rop: RadialOperator, tau: complex, g: Source, grid: Grid1D,
                        with_norm: bool = True) -> ResolventSolution:
        """
        求解 P_τ v = g（外行輻射條件）

        Args:
            rop: 徑向算子
            tau: 頻率，Im τ ≤ 0
            g: 徑向源（剖面或 r_1..r_N 上的取樣）
            grid: 網格
            with_norm: 是否計算 LE_τ 範數

        Returns:
            ResolventSolution: 解與診斷

        Raises:
            ValidationFailure: Im τ > 0
            NumericalFailure: 離散系統奇異
        """
        tau = complex(tau)
        if tau.imag > 0:
            raise ValidationFailure(f"resolvent requires Im tau <= 0, got tau={tau}")
        op = self.discrete(rop, grid)
        rhs = self._rhs(g, op.radii)
        R = float(op.radii[-1])
        psi, method = self._solve_path(op, tau, rhs)

        residual_vec = op.matrix(tau) @ psi - rhs
        defect = float(np.linalg.norm(residual_vec) / max(np.linalg.norm(rhs), 1e-300))
        scale = max(float(np.max(np.abs(psi))), 1e-300)
        dpsi = one_sided_first_derivative(psi, grid.h, at_end=True)
        radiation = float(abs(dpsi + 1j * tau * psi[-1]) / scale) if np.any(psi) else 0.0
        v = psi / op.radii
        norm = le_tau_norm(v, tau, op.radii) if with_norm else 0.0
        if defect > self.tolerance:
            logger.warning(f"Resolvent defect {defect:.2e} above tolerance {self.tolerance:.0e} at tau={tau}, "
                           f"l={rop.ell} ({method} path)")
        logger.debug(f"Solved resolvent tau={tau}, l={rop.ell}: defect={defect:.2e}, radiation={radiation:.2e}")
        return ResolventSolution(tau=tau, ell=rop.ell, r=op.radii, psi=psi, v=v, radiation_residual=radiation,
                                 defect=defect, le_tau_norm=norm, method=method,
                                 outgoing_amplitude=complex(psi[-1] * np.exp(1j * tau * R)), tolerance=self.tolerance)

    def le_tau_norm(self, v: np.ndarray, tau: complex, grid: Union[Grid1D, np.ndarray]) -> float:
        return le_tau_norm(v, tau, grid)

    def low_freq_scan(self, rop: RadialOperator, g: Source, lam: int, tau_grid: Sequence[float], grid: Grid1D,
                      kappa: Optional[int] = None, probe_radius: float = 8.0) -> LowFreqErrorReport:
        """
        低頻誤差掃描

        Args:
            rop: 徑向算子
            g: Z^{ν,λ} 測試源
            lam: 源的衰減階數
            tau_grid: 實頻率（0 < τ ≤ 1）
            grid: 網格
            kappa: 度規衰減率（λ = κ+1 時加算對數模板）
            probe_radius: 對數模板的固定觀測半徑

        Returns:
            LowFreqErrorReport: 誤差曲線與斜率
        """
        taus = np.sort(np.asarray(tau_grid, dtype=float))
        if len(taus) < 3:
            raise ValidationFailure("low-frequency scan needs at least three tau values")
        if np.any(taus <= 0) or np.any(taus > 1.0):
            raise ValidationFailure("low-frequency scan expects real 0 < tau <= 1")
        kappa = kappa if kappa is not None else rop.kappa
        if not 1 <= lam <= kappa + 1:
            raise ValidationFailure(f"lambda must lie in [1, {kappa + 1}], got {lam}")

        static = self.solve_resolvent(rop, 0.0, g, grid, with_norm=False)
        r = static.r
        br = japanese_bracket(r)
        window = (r >= SCAN_WINDOW[0]) & (r <= SCAN_WINDOW[1])
        if not np.any(window):
            raise ValidationFailure(f"grid does not cover the error window {SCAN_WINDOW}")
        probe = int(np.argmin(np.abs(r - probe_radius)))

        errors, residuals, norms, at_probe = [], [], [], []
        for tau in taus:
            sol = self.solve_resolvent(rop, tau, g, grid)
            E = sol.v - static.v * np.exp(-1j * tau * br)
            errors.append(float(np.max(np.abs(E[window]))))
            residuals.append(sol.radiation_residual)
            norms.append(sol.le_tau_norm)
            at_probe.append(complex(E[probe]))

        lowest = taus <= 10.0 * taus[0]
        if np.count_nonzero(lowest) < 2:
            lowest = np.arange(len(taus)) < 2
        slope = _least_squares_slope(np.log(taus[lowest]), np.log(np.maximum(np.array(errors)[lowest], 1e-300)))
        flags = []
        if np.any(np.diff(errors) < 0):
            flags.append("non-monotone error curve")
            logger.warning("Low-frequency error curve is non-monotone; tau or r grid may be under-resolved")

        report = LowFreqErrorReport(lam=lam, tau_grid=[float(t) for t in taus], error_norms=errors,
                                    fitted_slope=slope, radiation_residuals=residuals, le_tau_norms=norms,
                                    flags=flags)
        if lam == kappa + 1:
            report.epsilon_profile, report.log_fit_r2 = fit_log_template(taus, np.array(at_probe), kappa)
        logger.info(f"Low-frequency scan lambda={lam}: slope={slope:.3f}, flags={flags}")
        return report

    def pointwise_bound_check(self, rop: RadialOperator, g: Source, tau_set: Sequence[float], grid: Grid1D,
                              p_max: int = 1, rel_step: float = 1e-3) -> pd.DataFrame:
        """
        逐點界掃描

        High frequency (|τ| ≥ 1): sup_r |(τ∂_τ)^p(v e^{iτ⟨r⟩})|·⟨r⟩·|τ|^{1−p}.
        Low frequency (|τ| < 1): sup over ⟨r⟩ ≤ |τ|^{-1} of |(τ∂_τ)^p v|.

        Returns:
            DataFrame: regime, p, tau, value, bounded（每個 (regime, p) 的掃描內變化 < 3 倍）

        Raises:
            ValidationFailure: p_max 超出 {0, 1}
            NumericalFailure: τ 差分步長下溢
        """
        if p_max not in (0, 1):
            raise ValidationFailure(f"pointwise checks support p in {{0, 1}}, got p_max={p_max}")
        rows = []
        for tau in tau_set:
            tau = float(tau)
            if tau == 0:
                raise ValidationFailure("pointwise bound sweep excludes tau = 0")
            step = rel_step * abs(tau)
            if step < 1e-12:
                raise NumericalFailure(f"tau-difference step underflow at tau={tau}")
            base = self.solve_resolvent(rop, tau, g, grid, with_norm=False)
            r = base.r
            br = japanese_bracket(r)
            high = abs(tau) >= 1.0

            def field_at(t):
                v = base.v if t == tau else self.solve_resolvent(rop, t, g, grid, with_norm=False).v
                return v * np.exp(1j * t * br) if high else v

            values = {0: field_at(tau)}
            if p_max >= 1:
                values[1] = tau * (field_at(tau + step) - field_at(tau - step)) / (2.0 * step)
            for p, w in values.items():
                if high:
                    value = float(np.max(np.abs(w) * br * abs(tau) ** (1 - p)))
                else:
                    mask = br <= 1.0 / abs(tau)
                    value = float(np.max(np.abs(w[mask]))) if np.any(mask) else 0.0
                rows.append({"regime": "high" if high else "low", "p": p, "tau": tau, "value": value})

        frame = pd.DataFrame(rows, columns=["regime", "p", "tau", "value"])
        frame["bounded"] = True
        for (regime, p), group in frame.groupby(["regime", "p"]):
            vals = group["value"].to_numpy()
            positive = vals[vals > 0]
            ok = len(positive) == 0 or (len(positive) == len(vals) and positive.max() <= BOUND_FACTOR * positive.min())
            frame.loc[group.index, "bounded"] = bool(ok)
        logger.info(f"Pointwise bound sweep over {len(tau_set)} frequencies: all bounded={bool(frame['bounded'].all())}")
        return frame
