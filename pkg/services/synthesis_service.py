"""
傅立葉合成服務模組 - 由預解式資料重建 u(t, r) 並分離高低頻貢獻

u(t) = (1/2π)∫ e^{itτ} û(τ) dτ with û = R_τ(−iτu₀ + P¹u₀ − u₁). The smooth
model m(t) = e^{−μt}(p₀ + p₁t + p₂t²/2), which matches u, ∂ₜu and ∂ₜ²u at t = 0,
is transformed in closed form and subtracted so the quadrature only sees a
remainder decaying like τ^{−4}.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from services.evolution_service import CauchyData, TimeSeries
from services.operator_service import RadialOperator
from services.resolvent_service import ResolventService
from utils.common.errors import NumericalFailure, ValidationFailure
from utils.common.logging_utils import get_logger
from utils.numerics.grid import Grid1D
from utils.radial.cutoffs import chi_above, chi_below

# 配置日誌
logger = get_logger("synthesis_service")

DEFAULT_TAU_MAX = 16.0
MODEL_RATE = 1.0
# Filon 權重在 |θ| 小於此值時改用級數
SERIES_THRESHOLD = 0.5
PLANCHEREL_TOLERANCE = 1e-3


@dataclass
class SynthesisPlan:
    """
    合成計畫

    Args:
        tau_max: 頻率截斷
        n_tau: [0, tau_max] 上的區間數
        taper: 截斷前的光滑過渡寬度
        damping: τ → τ − iδ 的偏移 δ ≥ 0
        ell: 球諧指標
        data: 初始資料
    """

    data: CauchyData
    tau_max: float = DEFAULT_TAU_MAX
    n_tau: int = 2048
    taper: float = 4.0
    damping: float = 0.0
    ell: int = 0

    def __post_init__(self):
        if self.tau_max <= 0 or self.n_tau < 8:
            raise ValidationFailure(f"synthesis plan needs tau_max > 0 and n_tau >= 8, got {self.tau_max}, {self.n_tau}")
        if not 0 < self.taper < self.tau_max:
            raise ValidationFailure(f"taper width must lie in (0, tau_max), got {self.taper}")
        if self.damping < 0:
            raise ValidationFailure(f"damping must be >= 0, got {self.damping}")
        if self.ell != self.data.ell:
            raise ValidationFailure(f"plan harmonic l={self.ell} differs from data harmonic l={self.data.ell}")

    @classmethod
    def for_horizon(cls, data: CauchyData, t_max: float, tau_max: float = DEFAULT_TAU_MAX,
                    oversampling: float = 4.0, **kwargs) -> "SynthesisPlan":
        """Node count ~ oversampling·t_max·τ_max/π, so that t·Δτ ≤ π/oversampling on [0, t_max]."""
        n_tau = max(int(np.ceil(oversampling * t_max * tau_max / np.pi)), 64)
        return cls(data=data, tau_max=tau_max, n_tau=n_tau, ell=data.ell, **kwargs)

    @property
    def spacing(self) -> float:
        return self.tau_max / self.n_tau

    @property
    def nodes(self) -> np.ndarray:
        return self.spacing * np.arange(self.n_tau + 1)

    def window(self, tau: np.ndarray) -> np.ndarray:
        """1 below τ_max − taper, smoothly 0 at τ_max."""
        start = self.tau_max - self.taper
        x = 1.0 + np.maximum(tau - start, 0.0) / self.taper
        return np.asarray(chi_below(x, 1.0))

    def split(self, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """χ_{<1}(|τ|) and χ_{>1}(|τ|) weights per node."""
        a = np.abs(tau)
        return np.asarray(chi_below(a, 1.0)), np.asarray(chi_above(a, 1.0))

    def describe(self) -> Dict[str, float]:
        return {"tau_max": self.tau_max, "n_tau": self.n_tau, "taper": self.taper,
                "damping": self.damping, "ell": self.ell, "spacing": self.spacing}


@dataclass
class FrequencySamples:
    """觀測點上的頻域取樣，供 t 迴圈唯讀重用"""

    tau: np.ndarray
    remainder: np.ndarray
    model: np.ndarray
    model_coeffs: Tuple[float, float, float]
    r_obs: float
    damping: float

    @property
    def total(self) -> np.ndarray:
        return self.remainder + self.model


def _moment_integrals(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """I0 = ∫₀¹ e^{iθs}ds and I1 = ∫₀¹ s·e^{iθs}ds."""
    theta = np.asarray(theta, dtype=float)
    I0 = np.empty(theta.shape, dtype=complex)
    I1 = np.empty(theta.shape, dtype=complex)
    small = np.abs(theta) < SERIES_THRESHOLD
    th = theta[small]
    z = 1j * th
    term = np.ones_like(z)
    s0 = np.zeros_like(z)
    s1 = np.zeros_like(z)
    for k in range(12):
        if k:
            term = term * z / k
        s0 = s0 + term / (k + 1)
        s1 = s1 + term / (k + 2)
    I0[small], I1[small] = s0, s1
    th = theta[~small]
    e = np.exp(1j * th)
    I0[~small] = (e - 1.0) / (1j * th)
    I1[~small] = e / (1j * th) + (e - 1.0) / th ** 2
    return I0, I1


def filon_weights(t: float, nodes: np.ndarray) -> np.ndarray:
    """
    Filon-trapezoid weights w_j with Σ w_j F_j = ∫ F̃(τ)e^{itτ}dτ for the piecewise-linear interpolant F̃.
    """
    h = float(nodes[1] - nodes[0])
    I0, I1 = _moment_integrals(np.array([t * h]))
    alpha, beta = I0[0] - I1[0], I1[0]
    phase = np.exp(1j * t * nodes)
    w = np.zeros(len(nodes), dtype=complex)
    w[:-1] += h * phase[:-1] * alpha
    w[1:] += h * phase[:-1] * beta
    return w


class SynthesisService:
    """傅立葉合成服務"""

    def __init__(self, resolvent_service: ResolventService, model_rate: float = MODEL_RATE):
        self.resolvent_service = resolvent_service
        self.model_rate = model_rate
        logger.info(f"Synthesis service initialized with model_rate={model_rate}")

    def _initial_state(self, rop: RadialOperator, data: CauchyData, grid: Grid1D):
        op = self.resolvent_service.discrete(rop, grid)
        r = op.radii
        psi0 = r * data.u0.sample(r)
        pi0 = r * data.u1.sample(r)
        return op, r, psi0, pi0

    def sample_frequencies(self, rop: RadialOperator, data: CauchyData, r_obs: float, plan: SynthesisPlan,
                           grid: Grid1D, nodes: Optional[np.ndarray] = None) -> FrequencySamples:
        """
        在每個頻率節點求解預解式並扣除閉式模型

        Raises:
            ValidationFailure: ℓ 不一致、觀測點不在網格內
            NumericalFailure: 預解式奇異
        """
        if rop.ell != data.ell:
            raise ValidationFailure(f"operator harmonic l={rop.ell} differs from data harmonic l={data.ell}")
        if not 0.0 < r_obs < grid.extent:
            raise ValidationFailure(f"observer r={r_obs} outside the grid (0, {grid.extent})")
        op, r, psi0, pi0 = self._initial_state(rop, data, grid)
        k = grid.index_of(r_obs) - 1
        k = min(max(k, 0), len(r) - 2)
        coupled = op.coupling.nnz > 0
        # ∂ₜ²ψ = Kψ + C∂ₜψ at t = 0
        psi2 = op.stiffness @ psi0 + (op.coupling @ pi0 if coupled else 0.0)
        mu = self.model_rate
        p0 = psi0[k]
        p1 = pi0[k] + mu * p0
        p2 = psi2[k] + 2.0 * mu * p1 - mu * mu * p0

        base_rhs = (op.coupling @ psi0 if coupled else np.zeros_like(psi0)) - pi0
        base_rhs = base_rhs.astype(complex)
        base_rhs[-1] = 0.0
        psi0_rows = psi0.astype(complex)
        psi0_rows[-1] = 0.0

        taus = plan.nodes if nodes is None else np.asarray(nodes, dtype=float)
        shifted = taus - 1j * plan.damping
        remainder = np.empty(len(taus), dtype=complex)
        model = np.empty(len(taus), dtype=complex)
        logger.info(f"Sampling {len(taus)} resolvent nodes up to tau={taus[-1]:.3g} at r={r[k]:.4g}")
        for j, z in enumerate(shifted):
            psi_hat = self.resolvent_service.solve_field(rop, z, base_rhs - 1j * z * psi0_rows, grid)
            s = 1j * z + mu
            model[j] = p0 / s + p1 / s ** 2 + p2 / s ** 3
            remainder[j] = psi_hat[k] - model[j]
        return FrequencySamples(tau=taus, remainder=remainder / r[k], model=model / r[k],
                                model_coeffs=(p0 / r[k], p1 / r[k], p2 / r[k]), r_obs=float(r[k]),
                                damping=plan.damping)

    def _model_time(self, samples: FrequencySamples, t: float) -> Tuple[float, float]:
        p0, p1, p2 = samples.model_coeffs
        mu = self.model_rate
        decay = np.exp(-mu * t)
        value = decay * (p0 + p1 * t + 0.5 * p2 * t * t)
        rate = decay * (p1 + p2 * t) - mu * value
        return float(value), float(rate)

    @staticmethod
    def _check_resolution(t_list: Sequence[float], plan: SynthesisPlan):
        for t in t_list:
            if t < 0:
                raise ValidationFailure(f"synthesis times must be >= 0, got t={t}")
            if t * plan.spacing > np.pi:
                logger.error(f"Synthesis plan under-resolves t={t}: t*dtau={t * plan.spacing:.3f} > pi")
                raise ValidationFailure(f"plan under-resolves the oscillation at t={t}; increase n_tau")
        if plan.damping > 0 and plan.damping * max(t_list) > 0.1:
            raise ValidationFailure(f"damping {plan.damping} times t_max {max(t_list)} exceeds 0.1")

    @staticmethod
    def _half_line(values: np.ndarray, t: float, nodes: np.ndarray) -> Tuple[float, float]:
        """(1/π)Re∫₀^∞ F e^{itτ}dτ and its t-derivative, using F(−τ) = conj F(τ)."""
        w = filon_weights(t, nodes)
        value = float(np.real(np.dot(w, values))) / np.pi
        rate = float(np.real(np.dot(w, 1j * nodes * values))) / np.pi
        return value, rate

    def _assemble(self, samples: FrequencySamples, plan: SynthesisPlan, t_list: Sequence[float],
                  weights: np.ndarray, include_model: bool) -> Tuple[np.ndarray, np.ndarray]:
        tau = samples.tau
        taper = plan.window(tau)
        u = np.zeros(len(t_list))
        dtu = np.zeros(len(t_list))
        for i, t in enumerate(t_list):
            values = weights * taper * samples.remainder
            if not include_model:
                values = values + weights * samples.model
            value, rate = self._half_line(values, t, tau)
            if plan.damping > 0:
                # 乘回 e^{δt} 以抵銷 τ − iδ 的衰減
                grow = np.exp(plan.damping * t)
                value, rate = grow * value, grow * (rate + plan.damping * value)
            if include_model:
                m, dm = self._model_time(samples, t)
                value, rate = value + m, rate + dm
            u[i], dtu[i] = value, rate
        return u, dtu

    def synthesize(self, rop: RadialOperator, data: CauchyData, t_list: Sequence[float], r_obs: float,
                   plan: SynthesisPlan, grid: Grid1D, samples: Optional[FrequencySamples] = None) -> TimeSeries:
        """
        反傅立葉合成觀測點時間序列

        Args:
            rop: 徑向算子
            data: 初始資料
            t_list: 遞增的時間
            r_obs: 觀測半徑
            plan: 合成計畫
            grid: 輻射邊界網格
            samples: 可重用的頻域取樣

        Returns:
            TimeSeries: 合成的 u 與 ∂ₜu

        Raises:
            ValidationFailure: 計畫不足以解析 e^{itτ} 的振盪
        """
        t_list = np.asarray(t_list, dtype=float)
        self._check_resolution(t_list, plan)
        samples = samples or self.sample_frequencies(rop, data, r_obs, plan, grid)
        u, dtu = self._assemble(samples, plan, t_list, np.ones(len(samples.tau)), include_model=True)
        meta = dict(plan.describe(), h=grid.h, r_max=grid.extent, model_rate=self.model_rate)
        logger.info(f"Synthesized {len(t_list)} times at r={samples.r_obs}")
        return TimeSeries(samples.r_obs, t_list, u, dtu, np.zeros(0), meta, label="synthesized")

    def split_contributions(self, rop: RadialOperator, data: CauchyData, t_list: Sequence[float], r_obs: float,
                            plan: SynthesisPlan, grid: Grid1D,
                            samples: Optional[FrequencySamples] = None) -> Dict[str, TimeSeries]:
        """
        χ_{<1}(|τ|) 與 χ_{>1}(|τ|) 兩個窗的貢獻

        The low window is compactly supported in τ and is integrated from the full
        sampled transform; the high window is the complement, so u_low + u_high equals
        the synthesize output.
        """
        t_list = np.asarray(t_list, dtype=float)
        self._check_resolution(t_list, plan)
        samples = samples or self.sample_frequencies(rop, data, r_obs, plan, grid)
        low_w, _ = plan.split(samples.tau)
        # χ_{<1} 在 τ ≥ 2 為 0，不受截斷窗影響
        u_low, dtu_low = self._assemble(samples, plan, t_list, low_w, include_model=False)
        total = self.synthesize(rop, data, t_list, r_obs, plan, grid, samples)
        meta = dict(total.grid_meta)
        return {
            "u_low": TimeSeries(samples.r_obs, t_list, u_low, dtu_low, np.zeros(0), meta, label="low"),
            "u_high": TimeSeries(samples.r_obs, t_list, total.u_values - u_low, total.dtu_values - dtu_low,
                                 np.zeros(0), meta, label="high"),
        }

    def plancherel_check(self, rop: RadialOperator, data: CauchyData, r_obs: float, plan: SynthesisPlan,
                         grid: Grid1D, tolerance: float = PLANCHEREL_TOLERANCE) -> float:
        """
        τ 節點加倍下的窗化能量 ∫w(τ)|û|²dτ 的相對變化

        Raises:
            NumericalFailure: 變化超過容許值
        """
        coarse = self.sample_frequencies(rop, data, r_obs, plan, grid)
        fine_nodes = 0.5 * plan.spacing * np.arange(2 * plan.n_tau + 1)
        fine = self.sample_frequencies(rop, data, r_obs, plan, grid, nodes=fine_nodes)

        def energy(s: FrequencySamples) -> float:
            return float(trapezoid(plan.window(s.tau) * np.abs(s.total) ** 2, s.tau))

        e_coarse, e_fine = energy(coarse), energy(fine)
        change = abs(e_fine - e_coarse) / max(e_fine, 1e-300)
        logger.info(f"Plancherel check at r={r_obs}: relative change {change:.2e}")
        if change > tolerance:
            logger.error(f"Plancherel check failed: {change:.2e} > {tolerance:.1e}")
            raise NumericalFailure(f"windowed tau-energy changed by {change:.2e} under node doubling")
        return change

    @staticmethod
    def comparison(a: TimeSeries, b: TimeSeries, t_lo: float, t_hi: float) -> float:
        """Relative L² difference of two series over [t_lo, t_hi], b interpolated onto a's times."""
        mask = (a.times >= t_lo) & (a.times <= t_hi)
        if not np.any(mask):
            raise ValidationFailure(f"no samples in the comparison window [{t_lo}, {t_hi}]")
        ref = a.u_values[mask]
        other = np.interp(a.times[mask], b.times, b.u_values)
        return float(np.linalg.norm(ref - other) / max(np.linalg.norm(ref), 1e-300))

    @staticmethod
    def frame(series: Dict[str, TimeSeries]) -> pd.DataFrame:
        first = next(iter(series.values()))
        columns = {"t": first.times}
        for name, s in series.items():
            columns[name] = s.u_values
        return pd.DataFrame(columns)
