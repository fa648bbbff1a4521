"""
依賴注入模組 - 處理服務初始化和依賴注入
"""
from typing import Any, Dict, Optional

from config import settings
from services.file_service import FileService
from services.interfaces import ArtifactSinkInterface
from services.metric_service import MetricService
from services.operator_service import OperatorService
from services.platforms.csv_platform import CSVDirectoryPlatform
from services.platforms.memory_platform import MemoryPlatform
from services.poisson_service import PoissonService
from services.report_service import ReportService
from services.resolvent_service import ResolventService
from services.scenario_service import ScenarioService
from services.synthesis_service import SynthesisService
from services.tail_service import TailService
from utils.common.errors import ValidationFailure
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("dependencies")


class ServiceContainer:
    """服務容器類，負責管理所有服務實例"""

    def __init__(self):
        self._services: Dict[str, Any] = {}

    def get_or_create(self, service_key: str, factory_func) -> Any:
        """
        獲取或創建服務實例

        Args:
            service_key: 服務的唯一標識
            factory_func: 創建服務的工廠函數

        Returns:
            Any: 服務實例
        """
        if service_key not in self._services:
            self._services[service_key] = factory_func()
        return self._services[service_key]

    def clear(self):
        """清除所有服務實例"""
        self._services.clear()


# 創建全局服務容器實例
service_container = ServiceContainer()


def get_metric_service() -> MetricService:
    """獲取度規服務實例"""
    return service_container.get_or_create("metric", MetricService)


def get_operator_service() -> OperatorService:
    """獲取算子服務實例"""
    return service_container.get_or_create("operator", OperatorService)


def get_poisson_service() -> PoissonService:
    """獲取零頻預解式服務實例"""
    return service_container.get_or_create("poisson", lambda: PoissonService(get_operator_service()))


def get_resolvent_service() -> ResolventService:
    """獲取預解式服務實例"""
    return service_container.get_or_create("resolvent", lambda: ResolventService(get_operator_service()))


def get_synthesis_service() -> SynthesisService:
    """獲取頻域合成服務實例"""
    return service_container.get_or_create("synthesis", lambda: SynthesisService(get_resolvent_service()))


def get_tail_service() -> TailService:
    """獲取尾部擬合服務實例"""
    return service_container.get_or_create("tail", TailService)


def get_report_service() -> Optional[ReportService]:
    """獲取報告服務實例"""
    def create_service():
        try:
            return ReportService()
        except Exception as e:
            logger.error(f"Failed to initialize Report service: {str(e)}")
            return None

    return service_container.get_or_create("report", create_service)


def get_file_service() -> FileService:
    """獲取文件服務實例"""
    return service_container.get_or_create("file", lambda: FileService(settings.output_root))


def get_scenario_service() -> ScenarioService:
    """獲取情境編排服務實例"""
    def create_service():
        report_service = get_report_service()
        if report_service is None:
            raise ValidationFailure("report templates are unavailable; cannot orchestrate scenarios")
        service = ScenarioService(
            metric_service=get_metric_service(),
            operator_service=get_operator_service(),
            poisson_service=get_poisson_service(),
            resolvent_service=get_resolvent_service(),
            synthesis_service=get_synthesis_service(),
            tail_service=get_tail_service(),
            report_service=report_service,
            max_workers=settings.max_workers,
        )
        logger.info("Scenario service initialized successfully")
        return service

    return service_container.get_or_create("scenario", create_service)


def get_output_platform(name: str, directory: Optional[str] = None, kind: str = "csv") -> ArtifactSinkInterface:
    """
    獲取輸出平台實例

    Args:
        name: 執行名稱
        directory: 明確的輸出目錄（預設為 output_root/name）
        kind: "csv" 或 "memory"

    Raises:
        ValidationFailure: 未知的平台類型或目錄不可寫
    """
    kind = kind.lower()
    if kind == "memory":
        return MemoryPlatform()
    if kind == "csv":
        file_service = get_file_service()
        return CSVDirectoryPlatform(file_service, file_service.run_directory(name, directory))
    raise ValidationFailure(f"Invalid output platform type: {kind}")
