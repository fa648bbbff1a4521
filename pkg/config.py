"""
配置管理模組 - 處理應用程序配置、環境變量與情境設定檔
"""
import json
import math
import os
from typing import Any, Dict, List, Literal, Optional, Tuple

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from utils.common.errors import ValidationFailure

# 加載環境變量
load_dotenv()  # 從 .env 文件加載變量

CAUSALITY_FACTOR = 1.2
FLOAT_FORMAT = ".17g"
SECTIONS = ("metric", "grid", "data", "run", "resolvent", "synthesis", "output")
STAGES = ("check", "normalize", "build", "evolve", "convergence", "resolvent", "expand", "lowfreq", "bounds",
          "synthesize", "fit", "report")


class AppSettings(BaseSettings):
    """應用程序配置設置"""

    model_config = SettingsConfigDict(env_prefix="WAVETAIL_", env_file=".env", env_file_encoding="utf-8",
                                      extra="ignore")

    # 輸出配置
    output_root: str = "./runs"
    log_level: str = "INFO"
    max_workers: int = Field(1, ge=1)

    # 應用程序配置
    app_name: str = "wavetail"
    app_description: str = "Late-time wave tail laboratory for asymptotically flat stationary metrics"
    app_version: str = "0.3.0"

    def validate_settings(self) -> Dict[str, bool]:
        """
        驗證配置設置

        Returns:
            Dict[str, bool]: 配置驗證結果
        """
        return {
            "output_root": bool(self.output_root),
            "log_level": self.log_level.upper() in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"),
        }


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", coerce_numbers_to_str=True, validate_assignment=True)


class MetricSection(_Section):
    preset: Literal["flat", "price_k1", "family_k2", "family_k3", "family_k4", "custom"] = "flat"
    kappa: Optional[int] = None
    epsilon: float = 0.05
    mass: float = 0.1
    cutoff_scale: float = Field(4.0, gt=0)
    profile_dir: Optional[str] = None
    extent: float = Field(4096.0, gt=0)

    @property
    def effective_kappa(self) -> int:
        if self.kappa is not None:
            return self.kappa
        if self.preset == "price_k1":
            return 1
        if self.preset.startswith("family_k"):
            return int(self.preset[-1])
        return 2

    @property
    def is_flat(self) -> bool:
        return self.preset == "flat"


class GridSection(_Section):
    h: float = Field(0.05, gt=0)
    r_max: float = Field(160.0, gt=0)
    order: Literal[2, 4] = 4


class DataSection(_Section):
    family: Literal["gaussian", "bump", "plateau", "step_ball"] = "gaussian"
    center: float = 8.0
    width: float = Field(1.0, gt=0)
    support: Tuple[float, float] = (2.0, 14.0)
    amplitude: float = 1.0
    velocity_amplitude: float = 0.0
    ells: List[int] = Field(default_factory=lambda: [0])

    @field_validator("ells")
    @classmethod
    def _check_ells(cls, value: List[int]) -> List[int]:
        if not value or any(ell < 0 for ell in value):
            raise ValueError("data.ells must be a non-empty list of non-negative integers")
        return value

    @field_validator("support")
    @classmethod
    def _check_support(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if not 0.0 <= value[0] < value[1]:
            raise ValueError(f"data.support must satisfy 0 <= a < b, got {value}")
        return value


class RunSection(_Section):
    t_max: float = Field(100.0, gt=0)
    observers: List[float] = Field(default_factory=lambda: [10.0])
    dt_out: float = Field(0.5, gt=0)
    cfl_factor: float = Field(0.5, gt=0)
    stages: List[str] = Field(default_factory=lambda: ["check", "normalize", "build", "evolve", "fit", "report"])
    fit_window: Optional[Tuple[float, float]] = None
    floor_after: Optional[float] = None

    @field_validator("stages")
    @classmethod
    def _check_stages(cls, value: List[str]) -> List[str]:
        unknown = [s for s in value if s not in STAGES]
        if unknown:
            raise ValueError(f"run.stages has unknown entries {unknown}; expected a subset of {list(STAGES)}")
        return value


class ResolventSection(_Section):
    lam: int = Field(1, ge=1)
    tau0: float = Field(0.25, gt=0, le=1.0)
    n_tau: int = Field(13, ge=3)
    tau_set: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    probe_radius: float = Field(8.0, gt=0)
    tolerance: float = Field(1e-8, gt=0)


class SynthesisSection(_Section):
    tau_max: float = Field(16.0, gt=0)
    n_tau: Optional[int] = None
    taper: float = Field(4.0, gt=0)
    damping: float = Field(0.0, ge=0)
    t_start: float = Field(0.0, ge=0)
    plancherel: bool = True


class OutputSection(_Section):
    name: str = "scenario"
    directory: Optional[str] = None


class ScenarioConfig(BaseModel):
    """
    情境配置

    Every field is validated at construction; cross-field rules cover the
    causality margin, observer placement and the λ range.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    metric: MetricSection = Field(default_factory=MetricSection)
    grid: GridSection = Field(default_factory=GridSection)
    data: DataSection = Field(default_factory=DataSection)
    run: RunSection = Field(default_factory=RunSection)
    resolvent: ResolventSection = Field(default_factory=ResolventSection)
    synthesis: SynthesisSection = Field(default_factory=SynthesisSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _cross_checks(self) -> "ScenarioConfig":
        kappa = self.metric.effective_kappa
        if kappa < 1:
            raise ValueError(f"metric.kappa must be >= 1, got {kappa}")
        if not 1 <= self.resolvent.lam <= kappa + 1:
            raise ValueError(f"resolvent.lam must lie in [1, {kappa + 1}], got {self.resolvent.lam}")
        for r in self.run.observers:
            if not 0.0 < r < self.grid.r_max:
                raise ValueError(f"run.observers entry {r} lies outside (0, grid.r_max={self.grid.r_max})")
        needed = CAUSALITY_FACTOR * self.run.t_max + self.data.support[1]
        if self.grid.r_max < needed:
            raise ValueError(f"grid.r_max={self.grid.r_max} below the causality margin "
                             f"1.2*run.t_max + data.support[1] = {needed}")
        if self.grid.r_max <= 8 * self.grid.h:
            raise ValueError(f"grid.r_max={self.grid.r_max} too small for grid.h={self.grid.h}")
        return self

    def flat_items(self) -> Dict[str, Any]:
        """{"section.key": value} for every field, in declaration order."""
        items: Dict[str, Any] = {}
        for section in SECTIONS:
            for key, value in getattr(self, section).model_dump().items():
                items[f"{section}.{key}"] = value
        return items

    def with_overrides(self, overrides: Dict[str, Any]) -> "ScenarioConfig":
        """Apply {"section.key": value} updates and validate again."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS or not key:
                raise ValueError(f"override '{dotted}' must look like section.key with section in {SECTIONS}")
            data[section][key] = value
        return ScenarioConfig.model_validate(data)


def _encode(value: Any) -> str:
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite float {value} cannot be serialized")
        return format(value, FLOAT_FORMAT)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    if isinstance(value, str):
        return json.dumps(value)
    return json.dumps(value)


def _decode(raw: Optional[str]) -> Any:
    if raw is None:
        return None
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def dump_config(cfg: ScenarioConfig) -> str:
    """Key-value text, one `section.key = value` line per field."""
    lines = []
    current = None
    for dotted, value in cfg.flat_items().items():
        section = dotted.split(".", 1)[0]
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"# [{section}]")
            current = section
        lines.append(f"{dotted} = {_encode(value)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ScenarioConfig, path: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    return path


def load_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """
    讀取情境設定檔

    Args:
        path: `section.key = value` 格式的檔案
        overrides: 額外覆寫

    Returns:
        ScenarioConfig: 已驗證的配置

    Raises:
        pydantic.ValidationError: 欄位或交叉檢查不合法
        ValueError: 鍵格式錯誤
        ValidationFailure: 檔案不存在
    """
    if not os.path.isfile(path):
        raise ValidationFailure(f"config file {path} does not exist")
    data: Dict[str, Dict[str, Any]] = {section: {} for section in SECTIONS}
    for dotted, raw in dotenv_values(path, interpolate=False).items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ValueError(f"config key '{dotted}' must look like section.key with section in {SECTIONS}")
        data[section][key] = _decode(raw)
    cfg = ScenarioConfig.model_validate(data)
    return cfg.with_overrides(overrides) if overrides else cfg


# 創建全局設置實例
settings = AppSettings()

# 導出常用配置變量
OUTPUT_ROOT = settings.output_root
LOG_LEVEL = settings.log_level
MAX_WORKERS = settings.max_workers
