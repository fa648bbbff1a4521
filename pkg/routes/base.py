"""
命令路由基礎模組 - 子命令註冊、共用參數與情境建構
"""
import argparse
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from config import ScenarioConfig, load_config
from dependencies import get_output_platform, get_scenario_service
from services.interfaces import ArtifactSinkInterface
from services.scenario_service import ScenarioResult
from utils.common.errors import EXIT_OK, EXIT_VALIDATION, WavetailError
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("routes")

Argument = Tuple[Tuple[str, ...], Dict[str, Any]]

# 所有子命令共用的情境參數：旗標 → 配置鍵
SCENARIO_FLAGS: Dict[str, str] = {
    "preset": "metric.preset",
    "kappa": "metric.kappa",
    "epsilon": "metric.epsilon",
    "mass": "metric.mass",
    "h": "grid.h",
    "r_max": "grid.r_max",
    "order": "grid.order",
    "ells": "data.ells",
    "t_max": "run.t_max",
    "observers": "run.observers",
    "lam": "resolvent.lam",
    "name": "output.name",
    "output": "output.directory",
}

SCENARIO_ARGUMENTS: List[Argument] = [
    (("--config",), {"help": "section.key = value scenario file"}),
    (("--preset",), {"choices": ["flat", "price_k1", "family_k2", "family_k3", "family_k4", "custom"]}),
    (("--kappa",), {"type": int}),
    (("--epsilon",), {"type": float}),
    (("--mass",), {"type": float}),
    (("--h",), {"type": float, "help": "radial grid spacing"}),
    (("--r-max",), {"type": float, "dest": "r_max"}),
    (("--order",), {"type": int, "choices": [2, 4]}),
    (("--ell",), {"type": int, "action": "append", "dest": "ells", "help": "harmonic (repeatable)"}),
    (("--t-max",), {"type": float, "dest": "t_max"}),
    (("--observer",), {"type": float, "action": "append", "dest": "observers", "help": "observer radius (repeatable)"}),
    (("--lambda",), {"type": int, "dest": "lam", "help": "source decay order"}),
    (("--name",), {"help": "run name under the output root"}),
    (("--output",), {"help": "explicit artifact directory"}),
    (("--set",), {"action": "append", "default": [], "metavar": "SECTION.KEY=VALUE", "dest": "overrides",
                  "help": "raw config override (repeatable)"}),
]


@dataclass
class Command:
    """一個已註冊的子命令"""

    name: str
    help: str
    handler: Callable[[argparse.Namespace], int]
    arguments: List[Argument] = field(default_factory=list)


class CommandRouter:
    """子命令路由器：收集 handler，最後組成 argparse 解析器"""

    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str, arguments: Sequence[Argument] = ()):
        def register(handler: Callable[[argparse.Namespace], int]):
            self.commands[name] = Command(name, help, handler, list(arguments))
            return handler
        return register

    def include_router(self, router: "CommandRouter"):
        for name, command in router.commands.items():
            if name in self.commands:
                raise ValueError(f"duplicate command '{name}'")
            self.commands[name] = command

    def build_parser(self, prog: str, description: str) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=prog, description=description)
        sub = parser.add_subparsers(dest="command", metavar="COMMAND")
        sub.required = True
        for command in self.commands.values():
            p = sub.add_parser(command.name, help=command.help, description=command.help)
            for flags, kwargs in SCENARIO_ARGUMENTS + command.arguments:
                p.add_argument(*flags, **kwargs)
            p.set_defaults(handler=command.handler)
        return parser


def _parse_override(raw: str) -> Tuple[str, Any]:
    key, sep, value = raw.partition("=")
    if not sep:
        raise ValueError(f"--set expects SECTION.KEY=VALUE, got '{raw}'")
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value.strip()


def scenario_from_args(args: argparse.Namespace, stages: Optional[Sequence[str]] = None) -> ScenarioConfig:
    """
    由設定檔與命令列覆寫建立情境配置

    Args:
        args: 已解析的參數
        stages: 此子命令要執行的管線階段

    Raises:
        pydantic.ValidationError: 覆寫後的配置不合法
        ValueError: 覆寫格式錯誤
    """
    overrides: Dict[str, Any] = dict(_parse_override(raw) for raw in args.overrides)
    for flag, key in SCENARIO_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if stages is not None:
        overrides["run.stages"] = list(stages)
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    cfg = cfg.with_overrides(overrides) if overrides else cfg
    logger.info(f"Scenario '{cfg.output.name}' configured: preset={cfg.metric.preset}, stages={cfg.run.stages}")
    return cfg


def sink_for(cfg: ScenarioConfig) -> ArtifactSinkInterface:
    return get_output_platform(cfg.output.name, cfg.output.directory)


def emit(payload: Dict[str, Any]):
    """Print a JSON summary line on stdout."""
    print(json.dumps(payload, sort_keys=True, default=str))


def run_stages(args: argparse.Namespace, stages: Sequence[str],
               summarize: Callable[[ScenarioResult], Dict[str, Any]]) -> int:
    """
    執行指定階段並輸出摘要

    Args:
        args: 已解析的參數
        stages: 管線階段
        summarize: 由結果產生 JSON 摘要

    Returns:
        int: 退出碼（0 成功，2 驗證失敗，3 數值失敗）
    """
    try:
        cfg = scenario_from_args(args, stages)
        result = get_scenario_service().run_scenario(cfg, sink_for(cfg))
    except WavetailError as e:
        logger.error(f"Command '{args.command}' failed: {e}")
        return e.exit_code
    except ValueError as e:
        # pydantic.ValidationError 亦為 ValueError
        logger.error(f"Invalid scenario configuration: {e}")
        return EXIT_VALIDATION
    emit(dict(summarize(result), location=result.location))
    return EXIT_OK
