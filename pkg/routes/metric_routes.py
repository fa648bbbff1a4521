"""
度規路由模組 - check-metric、normalize、build-operator 子命令
"""
import argparse

from routes.base import CommandRouter, run_stages
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("metric_routes")

# 創建路由器
router = CommandRouter()


@router.command("check-metric", help="Check stationarity, slice signature and decay-class assumptions")
def check_metric(args: argparse.Namespace) -> int:
    logger.info("Received metric assumption check")
    return run_stages(args, ["check"], lambda result: result.manifest["metric_check"])


@router.command("normalize", help="Normalize the metric to the radial gauge and report residuals")
def normalize(args: argparse.Namespace) -> int:
    """
    正規化度規並輸出截斷半徑、匹配位移與殘差

    The residuals should sit at quadrature accuracy on r > cutoff radius.
    """
    def summarize(result):
        derived = result.manifest["derived"]
        return {key: derived[key] for key in ("cutoff_radius", "matching_shift", "normalization_residuals")}

    return run_stages(args, ["check", "normalize"], summarize)


@router.command("build-operator", help="Build the radial operators and dump their coefficients")
def build_operator(args: argparse.Namespace) -> int:
    def summarize(result):
        return {"ells": result.config.data.ells, "node_count": result.manifest["derived"]["node_count"]}

    return run_stages(args, ["normalize", "build"], summarize)
