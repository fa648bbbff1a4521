"""
演化路由模組 - evolve、synthesize 子命令
"""
import argparse

from dependencies import get_synthesis_service
from routes.base import CommandRouter, run_stages
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("evolution_routes")

# 創建路由器
router = CommandRouter()


def _series_summary(result, prefix: str):
    return {key: {"peak": s.peak, "samples": len(s.times), "t_final": float(s.times[-1])}
            for key, s in result.series.items() if key.startswith(prefix)}


@router.command("evolve", help="Evolve Cauchy data with RK4 method of lines and record observer series",
                arguments=[(("--convergence",), {"action": "store_true",
                                                 "help": "also run the h, h/2, h/4 convergence study"})])
def evolve(args: argparse.Namespace) -> int:
    """
    執行時間演化

    Writes one series CSV per (ℓ, observer) and one energy trace per ℓ.
    """
    stages = ["check", "normalize", "build", "evolve"] + (["convergence"] if args.convergence else [])

    def summarize(result):
        summary = {"series": _series_summary(result, "series_")}
        if args.convergence:
            summary["convergence"] = result.manifest["derived"]["convergence"]
        return summary

    logger.info(f"Received evolve request (convergence={args.convergence})")
    return run_stages(args, stages, summarize)


@router.command("synthesize", help="Synthesize u(t, r) from resolvent samples along the real axis",
                arguments=[(("--compare",), {"action": "store_true",
                                             "help": "also evolve and report the relative L2 difference"})])
def synthesize(args: argparse.Namespace) -> int:
    stages = ["normalize", "build", "synthesize"] + (["evolve"] if args.compare else [])

    def summarize(result):
        summary = {"series": _series_summary(result, "synthesized_"),
                   "synthesis": result.manifest["derived"]["synthesis"]}
        if args.compare:
            t_lo, t_hi = 10.0, min(50.0, result.config.run.t_max)
            pairs = {key: "series_" + key.split("_", 1)[1] for key in result.series if key.startswith("synthesized_")}
            summary["relative_l2"] = {
                key: get_synthesis_service().comparison(result.series[ref], result.series[key], t_lo, t_hi)
                for key, ref in pairs.items() if ref in result.series
            }
        return summary

    return run_stages(args, stages, summarize)
