"""
錯誤類型模組 - 定義實驗室的例外層級與對應的退出碼
"""
from typing import Optional

# 命令列退出碼
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class WavetailError(Exception):
    """所有實驗室錯誤的基類"""

    exit_code = EXIT_NUMERICAL


class ValidationFailure(WavetailError, ValueError):
    """輸入、配置或前置條件不合法"""

    exit_code = EXIT_VALIDATION


class NumericalFailure(WavetailError, ArithmeticError):
    """數值計算失敗：奇異系統、CFL 違反、NaN 爆炸、不收斂等"""

    exit_code = EXIT_NUMERICAL


class StageFailure(NumericalFailure):
    """
    管線階段失敗

    Args:
        stage: 失敗的階段名稱
        detail: 診斷訊息
    """

    def __init__(self, stage: str, detail: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.detail = detail
        self.cause = cause
        if cause is not None and isinstance(cause, WavetailError):
            self.exit_code = cause.exit_code
        super().__init__(f"stage '{stage}' failed: {detail}")
