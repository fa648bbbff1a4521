"""
定義服務接口
"""
from abc import ABC, abstractmethod
from typing import Any, Dict

import pandas as pd


class ArtifactSinkInterface(ABC):
    """成果輸出接口"""

    @property
    @abstractmethod
    def location(self) -> str:
        """輸出位置的描述（目錄路徑或 "memory"）"""

    @abstractmethod
    def write_frame(self, name: str, frame: pd.DataFrame, schema: str, version: int = 1) -> str:
        """
        寫出一個帶版本標頭的表格

        Args:
            name: 檔名（不含副檔名）
            frame: 資料表
            schema: 綱要名稱
            version: 綱要版本

        Returns:
            str: 內容的 sha256 摘要
        """

    @abstractmethod
    def write_text(self, name: str, text: str) -> str:
        """寫出文字成果，回傳 sha256 摘要"""

    @abstractmethod
    def write_manifest(self, manifest: Dict[str, Any]) -> None:
        """寫出執行清單；清單須包含所有已寫出成果的摘要"""

    @abstractmethod
    def mark_incomplete(self, stage: str, detail: str) -> None:
        """標記部分輸出為未完成"""

    @property
    @abstractmethod
    def digests(self) -> Dict[str, str]:
        """{成果名稱: sha256}"""
