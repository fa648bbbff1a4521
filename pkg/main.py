"""
主應用程序模組 - 組裝命令列介面並分派子命令
"""
import sys
from typing import List, Optional

# 導入配置和路由
from config import settings
from routes import cli_router
from utils.common.errors import EXIT_NUMERICAL, EXIT_VALIDATION, WavetailError
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("main")


def build_parser():
    return cli_router.build_parser(prog=settings.app_name,
                                   description=f"{settings.app_description} (v{settings.app_version})")


def cli(argv: Optional[List[str]] = None) -> int:
    """
    命令列入口

    Args:
        argv: 參數列（預設為 sys.argv[1:]）

    Returns:
        int: 退出碼（0 成功，2 驗證或用法錯誤，3 數值失敗）
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse 以 2 表示用法錯誤，--help 以 0 結束
        return int(e.code) if e.code is not None else 0

    # 檢查配置
    for key, ok in settings.validate_settings().items():
        if not ok:
            logger.warning(f"Setting {key.upper()} is invalid; check WAVETAIL_{key.upper()} in the .env file")

    try:
        return args.handler(args)
    except WavetailError as e:
        logger.error(f"Command '{args.command}' failed: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"Command '{args.command}' rejected its input: {e}")
        return EXIT_VALIDATION
    except ArithmeticError as e:
        logger.error(f"Command '{args.command}' hit a numerical error: {e}")
        logger.exception(e)
        return EXIT_NUMERICAL


# 啟動應用程序
if __name__ == "__main__":
    sys.exit(cli())
