"""
時間演化服務模組 - P u = 0 的逐球諧方法線積分與觀測序列

ψ = ru evolves as ∂ₜψ = π, ∂ₜπ = Kψ + Cπ with the Dirichlet discretization of
L_ℓ (K) and of the ∂ₜ coupling (C), integrated by classical RK4.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sparse

from services.operator_service import DiscreteOperator, OperatorService, RadialOperator
from utils.common.errors import NumericalFailure, ValidationFailure
from utils.common.logging_utils import get_logger
from utils.numerics.grid import Grid1D
from utils.radial.norms import eval_weighted_norm
from utils.radial.profiles import RadialProfile

# 配置日誌
logger = get_logger("evolution_service")

# RK4 在虛軸上的穩定界 2√2
RK4_IMAGINARY_LIMIT = 2.0 * np.sqrt(2.0)
CAUSALITY_FACTOR = 1.2


@dataclass
class CauchyData:
    """
    初始資料 (u0, u1)，單一球諧

    Args:
        u0, u1: 徑向剖面
        ell: 球諧指標
        support: 支撐區間 [a, b]
        z_norms: 可選的 Z 範數紀錄
    """

    u0: RadialProfile
    u1: RadialProfile
    ell: int = 0
    support: Tuple[float, float] = (0.0, 0.0)
    z_norms: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        a, b = self.support
        if not 0.0 <= a <= b:
            raise ValidationFailure(f"data support must satisfy 0 <= a <= b, got {self.support}")
        if self.ell < 0:
            raise ValidationFailure(f"harmonic index must be >= 0, got {self.ell}")
        if self.u0.max_order < 2:
            logger.warning(f"Initial data '{self.u0.name}' is not twice differentiable; formal order will degrade")

    @property
    def smooth(self) -> bool:
        return self.u0.max_order >= 2 and self.u1.max_order >= 2

    def scaled(self, alpha: float) -> "CauchyData":
        return CauchyData(alpha * self.u0, alpha * self.u1, self.ell, self.support, dict(self.z_norms))

    def __add__(self, other: "CauchyData") -> "CauchyData":
        if self.ell != other.ell:
            raise ValidationFailure("cannot add Cauchy data of different harmonics")
        support = (min(self.support[0], other.support[0]), max(self.support[1], other.support[1]))
        return CauchyData(self.u0 + other.u0, self.u1 + other.u1, self.ell, support)

    def record_norms(self, grid: Grid1D, kappa: int, nu: int = 1) -> Dict[str, float]:
        """Evaluate Z^{ν+1,κ}(u0) and Z^{ν,κ+1}(u1) on the grid."""
        self.z_norms = {
            "u0": eval_weighted_norm(self.u0, "Z", grid, n=min(nu + 1, 2), q=kappa),
            "u1": eval_weighted_norm(self.u1, "Z", grid, n=min(nu, 2), q=kappa + 1),
        }
        return self.z_norms


@dataclass
class TimeSeries:
    """
    觀測點的時間序列

    Attributes:
        observer_r: 觀測半徑（網格節點）
        times: 嚴格遞增的時間
        u_values, dtu_values: u 與 ∂ₜu
        energy_trace: 每個輸出時間的平坦二次型能量
        grid_meta: h、CFL、階數等
    """

    observer_r: float
    times: np.ndarray
    u_values: np.ndarray
    dtu_values: np.ndarray
    energy_trace: np.ndarray
    grid_meta: Dict[str, float] = field(default_factory=dict)
    label: str = "u"

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValidationFailure("time series times must be strictly increasing")

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.u_values))) if len(self.u_values) else 0.0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "u": self.u_values, "dtu": self.dtu_values})

    def energy_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "energy": self.energy_trace})

    def window(self, t_lo: float, t_hi: float) -> "TimeSeries":
        mask = (self.times >= t_lo) & (self.times <= t_hi)
        return TimeSeries(self.observer_r, self.times[mask], self.u_values[mask], self.dtu_values[mask],
                          self.energy_trace[mask] if len(self.energy_trace) == len(self.times) else self.energy_trace,
                          dict(self.grid_meta), self.label)


@dataclass
class EvolutionRun:
    """一次演化的全部輸出"""

    series: List[TimeSeries]
    psi: np.ndarray
    pi: np.ndarray
    t_final: float
    grid_meta: Dict[str, float]


@dataclass
class ConvergenceResult:
    """網格收斂研究結果"""

    observed_order: float
    differences: List[float]
    extrapolated: np.ndarray
    times: np.ndarray
    flags: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.flags


def gershgorin_bound(matrix: sparse.spmatrix) -> float:
    """max_i Σ_j |M_ij|, an upper bound on the spectral radius."""
    return float(np.max(np.asarray(abs(matrix).sum(axis=1)).ravel()))


class EvolutionService:
    """時間演化服務"""

    def __init__(self, operator_service: OperatorService, cfl_factor: float = 0.5,
                 enforce_causality: bool = True, progress_chunks: int = 10):
        """
        初始化演化服務

        Args:
            operator_service: 算子服務
            cfl_factor: Δt = cfl_factor·h
            enforce_causality: 要求 R_max ≥ 1.2·t_max + sup(support)
            progress_chunks: 進度日誌的分段數
        """
        if cfl_factor <= 0:
            raise ValidationFailure(f"cfl_factor must be positive, got {cfl_factor}")
        self.operator_service = operator_service
        self.cfl_factor = cfl_factor
        self.enforce_causality = enforce_causality
        self.progress_chunks = progress_chunks
        logger.info(f"Evolution service initialized with cfl_factor={cfl_factor}")

    def _check_inputs(self, data: CauchyData, t_max: float, observers: Sequence[float], grid: Grid1D):
        if t_max <= 0:
            raise ValidationFailure(f"t_max must be positive, got {t_max}")
        if data.support[1] >= grid.extent:
            raise ValidationFailure(f"data support {data.support} leaves the grid [0, {grid.extent}]")
        for r in observers:
            if not 0.0 < r < grid.extent:
                raise ValidationFailure(f"observer r={r} outside the grid (0, {grid.extent})")
        needed = CAUSALITY_FACTOR * t_max + data.support[1]
        if self.enforce_causality and grid.extent < needed:
            raise ValidationFailure(
                f"grid extent {grid.extent} below causality margin 1.2*t_max + support = {needed}")

    @staticmethod
    def energy(op: DiscreteOperator, psi: np.ndarray, pi: np.ndarray) -> float:
        """½(‖π‖² − ⟨ψ, Kψ⟩)·h."""
        return 0.5 * float(np.dot(pi, pi) - np.dot(psi, op.stiffness @ psi)) * op.grid.h

    def check_cfl(self, op: DiscreteOperator, dt: float) -> float:
        """
        CFL 檢查

        Returns:
            float: dt·√ρ(K) + dt·ρ(C)（須 ≤ 2√2）

        Raises:
            ValidationFailure: 超出 RK4 穩定界
        """
        spectral = gershgorin_bound(op.stiffness)
        coupling = gershgorin_bound(op.coupling) if op.coupling.nnz else 0.0
        number = dt * np.sqrt(spectral) + dt * coupling
        if number > RK4_IMAGINARY_LIMIT:
            logger.error(f"CFL violation: dt*sqrt(rho(K)) = {number:.3f} > {RK4_IMAGINARY_LIMIT:.3f}")
            raise ValidationFailure(f"CFL violation: {number:.3f} exceeds the RK4 limit {RK4_IMAGINARY_LIMIT:.3f}")
        return float(number)

    def run(self, rop: RadialOperator, data: CauchyData, t_max: float, observers: Sequence[float], grid: Grid1D,
            dt_out: Optional[float] = None, initial_state: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> EvolutionRun:
        """
        方法線積分並在觀測點取樣

        Args:
            rop: 徑向算子（ℓ 須與資料一致）
            data: 初始資料
            t_max: 終止時間
            observers: 觀測半徑
            grid: 網格
            dt_out: 輸出間隔（預設每步）
            initial_state: 可選的 (ψ, π) 取代 data 的取樣

        Returns:
            EvolutionRun: 觀測序列與最終狀態

        Raises:
            ValidationFailure: CFL、觀測點或因果裕度不符
            NumericalFailure: 出現 NaN
        """
        if rop.ell != data.ell:
            raise ValidationFailure(f"operator harmonic l={rop.ell} differs from data harmonic l={data.ell}")
        self._check_inputs(data, t_max, observers, grid)
        op = self.operator_service.assemble_discrete(rop, grid, None, "dirichlet")
        r = op.radii
        dt = self.cfl_factor * grid.h
        cfl = self.check_cfl(op, dt)
        n_steps = int(np.ceil(t_max / dt - 1e-9))
        dt = t_max / n_steps
        stride = 1 if dt_out is None else max(int(round(dt_out / dt)), 1)

        if initial_state is None:
            psi = r * data.u0.sample(r)
            pi = r * data.u1.sample(r)
        else:
            psi, pi = (np.array(x, dtype=float) for x in initial_state)
        K = op.stiffness
        C = op.coupling if op.coupling.nnz else None

        def rhs(p, q):
            acc = K @ p
            if C is not None:
                acc = acc + C @ q
            return q, acc

        idx = []
        for robs in observers:
            i = grid.index_of(robs) - 1
            if abs(r[i] - robs) > 1e-9 * max(robs, 1.0):
                logger.warning(f"Observer r={robs} snapped to grid node {r[i]}")
            idx.append(i)
        idx = np.array(idx)

        n_out = n_steps // stride + 1
        times = np.zeros(n_out)
        u_out = np.zeros((n_out, len(idx)))
        dtu_out = np.zeros((n_out, len(idx)))
        energies = np.zeros(n_out)

        def record(k, t):
            times[k] = t
            u_out[k] = psi[idx] / r[idx]
            dtu_out[k] = pi[idx] / r[idx]
            energies[k] = self.energy(op, psi, pi)

        record(0, 0.0)
        chunk = max(n_steps // max(self.progress_chunks, 1), 1)
        logger.info(f"Evolving l={rop.ell} to t={t_max} with h={grid.h}, dt={dt:.4g}, steps={n_steps}")
        k_out = 1
        for step in range(1, n_steps + 1):
            k1p, k1q = rhs(psi, pi)
            k2p, k2q = rhs(psi + 0.5 * dt * k1p, pi + 0.5 * dt * k1q)
            k3p, k3q = rhs(psi + 0.5 * dt * k2p, pi + 0.5 * dt * k2q)
            k4p, k4q = rhs(psi + dt * k3p, pi + dt * k3q)
            psi = psi + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            pi = pi + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
            if step % stride == 0:
                if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(pi))):
                    t_blow = step * dt
                    logger.error(f"Non-finite state at t={t_blow}")
                    raise NumericalFailure(f"evolution blew up at t={t_blow}")
                record(k_out, step * dt)
                k_out += 1
            if step % chunk == 0:
                logger.debug(f"Evolution progress: t={step * dt:.2f} of {t_max}")

        meta = {"h": grid.h, "dt": dt, "cfl": cfl, "order": grid.order, "r_max": grid.extent,
                "steps": n_steps, "ell": rop.ell}
        series = [TimeSeries(float(r[i]), times[:k_out].copy(), u_out[:k_out, j].copy(),
                             dtu_out[:k_out, j].copy(), energies[:k_out].copy(), dict(meta))
                  for j, i in enumerate(idx)]
        drift = abs(energies[k_out - 1] - energies[0]) / max(abs(energies[0]), 1e-300)
        logger.info(f"Evolution finished: relative energy change {drift:.2e}")
        return EvolutionRun(series=series, psi=psi, pi=pi, t_final=n_steps * dt, grid_meta=meta)

    def evolve(self, rop: RadialOperator, data: CauchyData, t_max: float, observers: Sequence[float],
               grid: Grid1D, dt_out: Optional[float] = None) -> List[TimeSeries]:
        """逐球諧演化，回傳每個觀測點的 TimeSeries"""
        return self.run(rop, data, t_max, observers, grid, dt_out).series

    def convergence_study(self, rop: RadialOperator, data: CauchyData, t_max: float, observer: float,
                          base_grid: Grid1D, t_window: Optional[Tuple[float, float]] = None,
                          refinements: int = 3) -> ConvergenceResult:
        """
        三層網格的收斂階估計

        Args:
            rop: 徑向算子
            data: 初始資料
            t_max: 演化時間
            observer: 觀測半徑（所有網格的節點）
            base_grid: 最粗網格，依序減半
            t_window: 比較時間窗（預設 [t_max/2, t_max]）

        Returns:
            ConvergenceResult: 觀測階數、差異與外推值
        """
        if refinements != 3:
            raise ValidationFailure("convergence study uses exactly three grids")
        grids = [base_grid, base_grid.refined(2), base_grid.refined(4)]
        dt_out = self.cfl_factor * base_grid.h
        samples = []
        for grid in grids:
            series = self.evolve(rop, data, t_max, [observer], grid, dt_out=dt_out)[0]
            samples.append(series)
        times = samples[0].times
        lo, hi = t_window or (0.5 * t_max, t_max)
        mask = (times >= lo) & (times <= hi)
        values = []
        for series in samples:
            if len(series.times) != len(times) or np.max(np.abs(series.times - times)) > 1e-9:
                raise NumericalFailure("refinement levels produced misaligned output times")
            values.append(series.u_values[mask])
        d1 = float(np.sqrt(np.mean((values[0] - values[1]) ** 2)))
        d2 = float(np.sqrt(np.mean((values[1] - values[2]) ** 2)))
        flags = []
        if d2 <= 0 or d1 <= d2:
            flags.append("non-monotone refinement differences")
            order = 0.0 if d2 <= 0 or d1 <= 0 else float(np.log2(d1 / d2))
        else:
            order = float(np.log2(d1 / d2))
        if order < 2.0:
            flags.append("observed order below 2")
        factor = 2.0 ** order - 1.0 if order > 0 else 1.0
        extrapolated = values[2] + (values[2] - values[1]) / factor
        logger.info(f"Convergence study at r={observer}: order={order:.2f}, flags={flags}")
        return ConvergenceResult(observed_order=order, differences=[d1, d2], extrapolated=extrapolated,
                                 times=times[mask], flags=flags)
