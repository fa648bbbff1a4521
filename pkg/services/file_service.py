"""
文件處理服務 - 成果目錄、版本化 CSV 與執行清單的讀寫
"""
import hashlib
import json
import os
from typing import Any, Dict, Optional, Tuple

import pandas as pd

from utils.common.errors import ValidationFailure
from utils.common.logging_utils import get_logger

logger = get_logger("file_service")

SCHEMA_PREFIX = "# schema:"
FLOAT_FORMAT = "%.17g"
INCOMPLETE_MARKER = "INCOMPLETE"
MANIFEST_NAME = "manifest.json"


class FileService:
    """處理成果目錄、CSV 與清單檔案的服務"""

    def __init__(self, output_root: Optional[str] = None):
        """
        初始化文件服務

        Args:
            output_root: 成果根目錄，默認為工作目錄下的 'runs'
        """
        self.output_root = output_root or os.path.join(os.getcwd(), "runs")
        logger.info(f"File service initialized with output root: {self.output_root}")

    def run_directory(self, name: str, directory: Optional[str] = None) -> str:
        """
        建立一次執行的成果目錄

        Args:
            name: 情境名稱
            directory: 明確指定的目錄（優先於 output_root/name）

        Returns:
            str: 目錄的絕對路徑
        """
        path = os.path.abspath(directory or os.path.join(self.output_root, name))
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create output directory {path}: {e}")
            raise ValidationFailure(f"output directory {path} is not writable: {e}") from e
        stale = os.path.join(path, INCOMPLETE_MARKER)
        if os.path.exists(stale):
            os.remove(stale)
            logger.info(f"Removed stale {INCOMPLETE_MARKER} marker in {path}")
        return path

    @staticmethod
    def frame_payload(frame: pd.DataFrame, schema: str, version: int = 1) -> bytes:
        """Header comment plus CSV body with 17 significant digits and no index."""
        body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return f"{SCHEMA_PREFIX} {schema} v{version}\n{body}".encode("utf-8")

    @staticmethod
    def digest(payload: bytes) -> str:
        return hashlib.sha256(payload).hexdigest()

    def write_bytes(self, path: str, payload: bytes) -> str:
        with open(path, "wb") as fh:
            fh.write(payload)
        logger.debug(f"Wrote {len(payload)} bytes to {path}")
        return self.digest(payload)

    def write_csv(self, path: str, frame: pd.DataFrame, schema: str, version: int = 1) -> str:
        return self.write_bytes(path, self.frame_payload(frame, schema, version))

    @staticmethod
    def read_csv(path: str) -> Tuple[pd.DataFrame, Optional[str]]:
        """
        讀取版本化 CSV

        Returns:
            Tuple[pd.DataFrame, Optional[str]]: 資料表與 "name vN" 綱要字串
        """
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline().strip()
        schema = first[len(SCHEMA_PREFIX):].strip() if first.startswith(SCHEMA_PREFIX) else None
        return pd.read_csv(path, comment="#"), schema

    def write_json(self, path: str, payload: Dict[str, Any]) -> str:
        text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"
        return self.write_bytes(path, text.encode("utf-8"))

    @staticmethod
    def read_json(path: str) -> Dict[str, Any]:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def mark_incomplete(self, directory: str, stage: str, detail: str) -> str:
        path = os.path.join(directory, INCOMPLETE_MARKER)
        self.write_bytes(path, f"stage: {stage}\n{detail}\n".encode("utf-8"))
        logger.warning(f"Marked {directory} incomplete at stage '{stage}'")
        return path


def _json_default(value: Any):
    """numpy scalars, tuples and complex numbers in manifests."""
    if isinstance(value, complex):
        return [value.real, value.imag]
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
