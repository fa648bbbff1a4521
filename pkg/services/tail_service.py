"""
衰減率服務模組 - 局部冪指數、漸近指數擬合與衰減摘要表
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import median_filter

from services.evolution_service import TimeSeries
from utils.common.errors import NumericalFailure, ValidationFailure
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("tail_service")

MIN_SAMPLES_PER_DECADE = 30
MEDIAN_WINDOW = 5
ROUNDOFF_FACTOR = 1e3
FLOOR_MARGIN = 10.0
WINDOW_SHIFT = 0.2
# 零交叉點超過此比例時視為振盪主導
CROSSING_LIMIT = 0.1
DEFAULT_FLOOR_THRESHOLD = 1e-8


def tolerance_for(kappa: int) -> float:
    """|p_∞ − target| tolerance: 0.15 up to κ = 2, 0.25 beyond."""
    return 0.15 if kappa <= 2 else 0.25


def target_exponent(kappa: int, quantity: str = "u") -> float:
    """−(κ+2) for u and −(κ+3) for ∂ₜu at fixed r."""
    if quantity not in ("u", "dtu"):
        raise ValidationFailure(f"quantity must be 'u' or 'dtu', got {quantity!r}")
    return -(kappa + 2.0) if quantity == "u" else -(kappa + 3.0)


@dataclass
class TailFit:
    """
    尾部擬合結果

    Attributes:
        observer_r: 觀測半徑
        quantity: "u" 或 "dtu"
        window: 擬合時間窗
        lpi_t, lpi_p: 局部冪指數曲線 p(t) = d ln|u| / d ln t
        p_infinity: p(t) = p_∞ + a/t 的外推值
        p_uncertainty: 視窗與解析度變動的半寬
        direct_slope: ln|u| 對 ln t 的直接斜率
        target: 預期指數（平坦度規為 None）
        tolerance: 容許誤差
        roundoff_floor: 捨入誤差底線估計
        bound_respected: 量測指數不慢於目標
    """

    observer_r: float
    quantity: str
    window: Tuple[float, float]
    lpi_t: np.ndarray
    lpi_p: np.ndarray
    p_infinity: float
    p_uncertainty: float
    direct_slope: float
    target: Optional[float] = None
    tolerance: Optional[float] = None
    roundoff_floor: float = 0.0
    flags: List[str] = field(default_factory=list)

    @property
    def bound_respected(self) -> Optional[bool]:
        if self.target is None:
            return None
        return bool(self.p_infinity <= self.target + self.tolerance)

    @property
    def passed(self) -> Optional[bool]:
        if self.target is None:
            return None
        return bool(abs(self.p_infinity - self.target) <= self.tolerance)

    def lpi_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.lpi_t, "p": self.lpi_p})


@dataclass
class DecayEntry:
    """摘要表的一列輸入"""

    kappa: int
    ell: int
    observer_r: float
    fit_u: Optional[TailFit] = None
    fit_dtu: Optional[TailFit] = None
    floor_ratio: Optional[float] = None
    convergence_order: Optional[float] = None
    label: str = ""

    @property
    def flat(self) -> bool:
        return self.kappa == 0


def huygens_floor(series: TimeSeries, t_after: float) -> float:
    """max|u| over t ≥ t_after relative to the peak over the whole series."""
    peak = series.peak
    if peak == 0:
        raise NumericalFailure("series is identically zero; no floor can be measured")
    mask = series.times >= t_after
    if not np.any(mask):
        raise ValidationFailure(f"series ends before t={t_after}")
    return float(np.max(np.abs(series.u_values[mask])) / peak)


class TailService:
    """衰減率擷取服務"""

    def __init__(self, floor_threshold: float = DEFAULT_FLOOR_THRESHOLD):
        self.floor_threshold = floor_threshold
        logger.info(f"Tail service initialized with floor_threshold={floor_threshold}")

    @staticmethod
    def _select(series: TimeSeries, quantity: str, window: Tuple[float, float]):
        values = series.u_values if quantity == "u" else series.dtu_values
        t_lo, t_hi = window
        if not 0 < t_lo < t_hi:
            raise ValidationFailure(f"fit window must satisfy 0 < t_lo < t_hi, got {window}")
        mask = (series.times >= t_lo) & (series.times <= t_hi)
        return series.times[mask], values[mask]

    @staticmethod
    def _lpi(t: np.ndarray, values: np.ndarray, floor: float) -> Tuple[np.ndarray, np.ndarray, List[str]]:
        flags = []
        sign = np.sign(values)
        crossing = np.zeros(len(values), dtype=bool)
        changes = np.nonzero(sign[1:] * sign[:-1] <= 0)[0]
        crossing[changes] = True
        crossing[changes + 1] = True
        if len(changes) > CROSSING_LIMIT * len(values):
            logger.error(f"{len(changes)} zero crossings among {len(values)} samples")
            raise NumericalFailure(f"fit window is dominated by zero crossings ({len(changes)} sign changes)")
        if len(changes):
            flags.append(f"{len(changes)} zero crossings excluded")

        smoothed = median_filter(np.abs(values), size=MEDIAN_WINDOW, mode="nearest")
        usable = (smoothed > FLOOR_MARGIN * floor) & ~crossing
        if np.count_nonzero(usable) < 3:
            raise NumericalFailure("fewer than three samples above the roundoff floor")
        if not np.all(usable):
            flags.append(f"{np.count_nonzero(~usable)} samples below floor or at crossings")
        log_t = np.log(t)
        log_u = np.log(np.maximum(smoothed, np.finfo(float).tiny))
        p = np.gradient(log_u, log_t)
        return t[usable], p[usable], flags

    @staticmethod
    def _asymptote(t: np.ndarray, p: np.ndarray) -> Tuple[float, float]:
        """Least-squares p(t) = p_∞ + a/t; returns (p_∞, standard error)."""
        design = np.column_stack([np.ones_like(t), 1.0 / t])
        coeffs, residual, *_ = np.linalg.lstsq(design, p, rcond=None)
        dof = max(len(t) - 2, 1)
        sigma2 = float(residual[0]) / dof if len(residual) else 0.0
        cov = sigma2 * np.linalg.pinv(design.T @ design)
        return float(coeffs[0]), float(np.sqrt(max(cov[0, 0], 0.0)))

    def _fit_window(self, series: TimeSeries, quantity: str, window: Tuple[float, float], floor: float):
        t, values = self._select(series, quantity, window)
        decades = np.log10(window[1] / window[0])
        if len(t) < MIN_SAMPLES_PER_DECADE * max(decades, 1e-12) or len(t) < 5:
            raise ValidationFailure(
                f"series too short: {len(t)} samples over {decades:.2f} decades in window {window}")
        lpi_t, lpi_p, flags = self._lpi(t, values, floor)
        p_inf, stderr = self._asymptote(lpi_t, lpi_p)
        keep = np.abs(values) > FLOOR_MARGIN * floor
        direct = float(np.polyfit(np.log(t[keep]), np.log(np.abs(values[keep])), 1)[0]) if np.count_nonzero(keep) > 1 \
            else float("nan")
        return lpi_t, lpi_p, p_inf, stderr, direct, flags

    def fit_tail(self, series: TimeSeries, window: Tuple[float, float], quantity: str = "u",
                 kappa: Optional[int] = None, refined: Optional[TimeSeries] = None) -> TailFit:
        """
        擬合尾部指數

        Args:
            series: 觀測序列
            window: 擬合時間窗（須在過渡段之後）
            quantity: "u" 或 "dtu"
            kappa: 度規衰減率（None 表示不比較目標）
            refined: 可選的加密網格序列，用於解析度不確定性

        Returns:
            TailFit: LPI 曲線與 p_∞

        Raises:
            ValidationFailure: 視窗無效或取樣不足
            NumericalFailure: 零交叉主導或低於捨入底線
        """
        if quantity not in ("u", "dtu"):
            raise ValidationFailure(f"quantity must be 'u' or 'dtu', got {quantity!r}")
        all_values = series.u_values if quantity == "u" else series.dtu_values
        peak = float(np.max(np.abs(all_values))) if len(all_values) else 0.0
        floor = ROUNDOFF_FACTOR * np.finfo(float).eps * peak

        lpi_t, lpi_p, p_inf, stderr, direct, flags = self._fit_window(series, quantity, window, floor)

        spread = [stderr]
        t_first, t_last = float(series.times[0]), float(series.times[-1])
        for factor in (1.0 - WINDOW_SHIFT, 1.0 + WINDOW_SHIFT):
            shifted = (max(window[0] * factor, t_first), min(window[1] * factor, t_last))
            if shifted[1] <= shifted[0]:
                continue
            try:
                spread.append(abs(self._fit_window(series, quantity, shifted, floor)[2] - p_inf))
            except (ValidationFailure, NumericalFailure) as e:
                flags.append(f"window shift x{factor:.1f} skipped: {e}")
        if refined is not None:
            try:
                spread.append(abs(self._fit_window(refined, quantity, window, floor)[2] - p_inf))
            except (ValidationFailure, NumericalFailure) as e:
                flags.append(f"refined series skipped: {e}")
        else:
            flags.append("no grid-refinement evidence")

        target = target_exponent(kappa, quantity) if kappa else None
        tolerance = tolerance_for(kappa) if kappa else None
        fit = TailFit(observer_r=series.observer_r, quantity=quantity, window=(float(window[0]), float(window[1])),
                      lpi_t=lpi_t, lpi_p=lpi_p, p_infinity=p_inf, p_uncertainty=float(max(spread)),
                      direct_slope=direct, target=target, tolerance=tolerance, roundoff_floor=floor, flags=flags)
        logger.info(f"Tail fit at r={series.observer_r} ({quantity}): p_inf={p_inf:.3f} +/- {fit.p_uncertainty:.3f}"
                    f", target={target}")
        return fit

    def decay_report(self, entries: Sequence[DecayEntry], min_order: float = 2.0) -> pd.DataFrame:
        """
        衰減摘要表

        Every row without convergence evidence is marked "unverified"; the flat row
        reports the amplitude floor in place of an exponent.
        """
        rows: List[Dict] = []
        for entry in entries:
            verified = entry.convergence_order is not None and entry.convergence_order >= min_order
            row = {
                "label": entry.label,
                "kappa": entry.kappa,
                "ell": entry.ell,
                "observer_r": entry.observer_r,
                "p_u": np.nan,
                "p_dtu": np.nan,
                "uncertainty": np.nan,
                "target": np.nan,
                "tolerance": np.nan,
                "convergence_order": entry.convergence_order if entry.convergence_order is not None else np.nan,
                "bound_respected": None,
                "statement": "",
                "status": "",
            }
            if entry.flat:
                ratio = entry.floor_ratio
                row["statement"] = f"floor: |u| < {self.floor_threshold:.0e}*peak after passage"
                row["floor_ratio"] = ratio if ratio is not None else np.nan
                ok = ratio is not None and ratio < self.floor_threshold
            else:
                if entry.fit_u is None:
                    raise ValidationFailure(f"row kappa={entry.kappa}, r={entry.observer_r} has no tail fit")
                fit = entry.fit_u
                row.update(p_u=fit.p_infinity, target=fit.target, tolerance=fit.tolerance,
                           bound_respected=fit.bound_respected)
                uncertainty = [fit.p_uncertainty]
                ok = bool(fit.passed)
                if entry.fit_dtu is not None:
                    row["p_dtu"] = entry.fit_dtu.p_infinity
                    uncertainty.append(entry.fit_dtu.p_uncertainty)
                    ok = ok and bool(entry.fit_dtu.passed)
                row["uncertainty"] = max(uncertainty)
                row["statement"] = f"|u| ~ t^{fit.target:g}"
            if not verified:
                row["status"] = "unverified"
            else:
                row["status"] = "pass" if ok else "fail"
            rows.append(row)
        frame = pd.DataFrame(rows)
        logger.info(f"Decay report with {len(frame)} rows: "
                    f"{frame['status'].value_counts().to_dict() if len(frame) else {}}")
        return frame

    @staticmethod
    def exponent_ladder(report: pd.DataFrame) -> pd.DataFrame:
        """Mean p_∞ per κ and its step against the previous κ."""
        rows = report[report["kappa"] > 0]
        ladder = rows.groupby("kappa")["p_u"].mean().reset_index()
        ladder["step"] = ladder["p_u"].diff()
        return ladder
