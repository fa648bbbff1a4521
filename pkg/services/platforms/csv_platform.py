"""
CSV 目錄輸出平台實現
"""
import os
from typing import Any, Dict

import pandas as pd

from services.file_service import MANIFEST_NAME, FileService
from services.interfaces import ArtifactSinkInterface
from utils.common.logging_utils import get_logger

logger = get_logger("csv_platform")


class CSVDirectoryPlatform(ArtifactSinkInterface):
    """把成果寫入單一執行目錄的平台"""

    def __init__(self, file_service: FileService, directory: str):
        self.file_service = file_service
        self.directory = directory
        self._digests: Dict[str, str] = {}

    @property
    def location(self) -> str:
        return self.directory

    @property
    def digests(self) -> Dict[str, str]:
        return dict(self._digests)

    def write_frame(self, name: str, frame: pd.DataFrame, schema: str, version: int = 1) -> str:
        filename = f"{name}.csv"
        digest = self.file_service.write_csv(os.path.join(self.directory, filename), frame, schema, version)
        self._digests[filename] = digest
        logger.info(f"Wrote {filename} ({len(frame)} rows, schema {schema} v{version})")
        return digest

    def write_text(self, name: str, text: str) -> str:
        digest = self.file_service.write_bytes(os.path.join(self.directory, name), text.encode("utf-8"))
        self._digests[name] = digest
        return digest

    def write_manifest(self, manifest: Dict[str, Any]) -> None:
        payload = dict(manifest, artifacts=self.digests)
        self.file_service.write_json(os.path.join(self.directory, MANIFEST_NAME), payload)
        logger.info(f"Wrote manifest with {len(self._digests)} artifact digests to {self.directory}")

    def mark_incomplete(self, stage: str, detail: str) -> None:
        self.file_service.mark_incomplete(self.directory, stage, detail)
