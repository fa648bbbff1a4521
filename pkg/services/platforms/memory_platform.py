"""
記憶體輸出平台實現 - 不寫檔，保留成果供檢查
"""
from typing import Any, Dict, Optional

import pandas as pd

from services.file_service import FileService
from services.interfaces import ArtifactSinkInterface


class MemoryPlatform(ArtifactSinkInterface):
    """把成果保留在記憶體中的平台"""

    def __init__(self):
        self.frames: Dict[str, pd.DataFrame] = {}
        self.texts: Dict[str, str] = {}
        self.manifest: Optional[Dict[str, Any]] = None
        self.incomplete: Optional[str] = None
        self._digests: Dict[str, str] = {}

    @property
    def location(self) -> str:
        return "memory"

    @property
    def digests(self) -> Dict[str, str]:
        return dict(self._digests)

    def write_frame(self, name: str, frame: pd.DataFrame, schema: str, version: int = 1) -> str:
        self.frames[name] = frame.copy()
        digest = FileService.digest(FileService.frame_payload(frame, schema, version))
        self._digests[f"{name}.csv"] = digest
        return digest

    def write_text(self, name: str, text: str) -> str:
        self.texts[name] = text
        digest = FileService.digest(text.encode("utf-8"))
        self._digests[name] = digest
        return digest

    def write_manifest(self, manifest: Dict[str, Any]) -> None:
        self.manifest = dict(manifest, artifacts=self.digests)

    def mark_incomplete(self, stage: str, detail: str) -> None:
        self.incomplete = f"{stage}: {detail}"
