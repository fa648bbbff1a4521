"""
符號類半範數模組 - 按環形估計 ⟨r⟩^{j−q}|∂^j f| 並給出歸屬判定

Finite sampling cannot prove class membership; the verdict is a falsification
test on the last annuli of the sampled range.
"""
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from utils.common.errors import ValidationFailure
from utils.common.logging_utils import get_logger
from utils.radial.cutoffs import DyadicAnnulus, japanese_bracket
from utils.radial.profiles import RadialProfile, SymbolClass

# 配置日誌
logger = get_logger("seminorms")

# 判定參數
TAIL_ANNULI = 4
BOUNDED_GROWTH = 1.5
GEOMETRIC_RATIO = 0.9
NODES_PER_ANNULUS = 64


@dataclass
class SeminormReport:
    """
    半範數表

    Attributes:
        claimed: 被檢驗的符號類
        table: shape (j_max+1, m_max+1)，每個 (j, m) 的加權上確界或二進加權項
        partial_sums: ℓ¹ 類的部分和（其他類為 None）
        verdicts: 每個 j 的判定
    """

    claimed: SymbolClass
    table: np.ndarray
    partial_sums: np.ndarray = None
    verdicts: Dict[int, bool] = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        return all(self.verdicts.values())

    def rows(self) -> List[dict]:
        out = []
        for j in range(self.table.shape[0]):
            for m in range(self.table.shape[1]):
                row = {"j": j, "m": m, "weighted": float(self.table[j, m])}
                if self.partial_sums is not None:
                    row["partial_sum"] = float(self.partial_sums[j, m])
                out.append(row)
        return out


def annulus_samples(m: int, count: int = NODES_PER_ANNULUS) -> np.ndarray:
    """Sample radii inside A_m (uniform in log r except for A_0)."""
    lo, hi = DyadicAnnulus(m).radial_bounds()
    if m == 0:
        return np.linspace(lo, hi, count)
    return np.geomspace(lo, hi, count)


def _bounded_tail(values: np.ndarray) -> bool:
    tail = values[-TAIL_ANNULI:]
    floor = 1e-14 * max(float(np.max(np.abs(values))), 1e-300)
    return bool(np.all(tail[1:] <= BOUNDED_GROWTH * tail[:-1] + floor))


def _geometric_tail(terms: np.ndarray) -> bool:
    tail = terms[-TAIL_ANNULI:]
    floor = 1e-14 * max(float(np.max(np.abs(terms))), 1e-300)
    return bool(np.all(tail[1:] <= GEOMETRIC_RATIO * tail[:-1] + floor))


def estimate_seminorms(f: RadialProfile, claimed: SymbolClass, m_max: int, j_max: int) -> SeminormReport:
    """
    估計符號類半範數

    Args:
        f: 待檢驗剖面
        claimed: 宣稱的符號類
        m_max: 最外層環形索引
        j_max: 最高導數階數

    Returns:
        SeminormReport: 每個 (j, m) 的加權量與判定

    Raises:
        ValidationFailure: 導數階數不足或取樣範圍為空
    """
    if f.max_order < j_max:
        raise ValidationFailure(f"profile '{f.name}' has derivatives up to {f.max_order}, need {j_max}")
    if m_max < 2:
        raise ValidationFailure(f"need at least annuli 0..2 to judge membership, got m_max={m_max}")
    if j_max < 0:
        raise ValidationFailure("j_max must be non-negative")

    table = np.zeros((j_max + 1, m_max + 1))
    for m in range(m_max + 1):
        r = annulus_samples(m)
        br = japanese_bracket(r)
        for j in range(j_max + 1):
            dj = np.abs(f.sample(r, j))
            if claimed.kind == "S_log":
                weight = br ** j if j > 0 else 1.0 / (1.0 + np.log(br))
                table[j, m] = np.max(dj * weight)
            elif claimed.kind == "l1S":
                table[j, m] = 2.0 ** (m * (j - claimed.q)) * np.max(dj)
            else:
                table[j, m] = np.max(br ** (j - claimed.q) * dj)

    report = SeminormReport(claimed=claimed, table=table)
    if claimed.kind == "l1S":
        report.partial_sums = np.cumsum(table, axis=1)
        report.verdicts = {j: _geometric_tail(table[j]) for j in range(j_max + 1)}
    else:
        report.verdicts = {j: _bounded_tail(table[j]) for j in range(j_max + 1)}
    logger.debug(f"Seminorms of {f.name} against {claimed}: consistent={report.consistent}")
    return report
