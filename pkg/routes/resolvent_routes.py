"""
預解式路由模組 - resolvent、expand-r0、lowfreq-scan 子命令
"""
import argparse

from routes.base import CommandRouter, run_stages
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("resolvent_routes")

# 創建路由器
router = CommandRouter()


def _with_taus(args: argparse.Namespace):
    if getattr(args, "taus", None):
        args.overrides = list(args.overrides) + [f"resolvent.tau_set={args.taus}"]


@router.command("resolvent", help="Solve P_tau v = g with the outgoing boundary closure on a tau set",
                arguments=[(("--tau",), {"type": float, "action": "append", "dest": "taus",
                                         "help": "real frequency (repeatable)"}),
                           (("--bounds",), {"action": "store_true",
                                            "help": "also run the pointwise bound sweep for p in {0, 1}"})])
def resolvent(args: argparse.Namespace) -> int:
    """
    在 τ 集合上求解預解式

    Each row of the resolvent CSV carries the defect, the radiation residual,
    the LE_τ norm and the outgoing amplitude.
    """
    _with_taus(args)
    stages = ["normalize", "build", "resolvent"] + (["bounds"] if args.bounds else [])

    def summarize(result):
        summary = {"taus": result.config.resolvent.tau_set}
        if args.bounds:
            summary["pointwise_bounded"] = result.manifest["derived"]["pointwise_bounded"]
        return summary

    return run_stages(args, stages, summarize)


@router.command("expand-r0", help="Bootstrap the zero-resolvent expansion and compare with the direct solve")
def expand_r0(args: argparse.Namespace) -> int:
    logger.info("Received zero-resolvent expansion request")
    return run_stages(args, ["normalize", "build", "expand"], lambda result: result.manifest["derived"]["expansion"])


@router.command("lowfreq-scan", help="Scan the low-frequency error of R_tau g against (R_0 g)exp(-i tau <r>)",
                arguments=[(("--tau0",), {"type": float, "help": "largest frequency of the geometric grid"}),
                           (("--n-tau",), {"type": int, "dest": "n_tau", "help": "number of frequencies"})])
def lowfreq_scan(args: argparse.Namespace) -> int:
    if args.tau0 is not None:
        args.overrides = list(args.overrides) + [f"resolvent.tau0={args.tau0}"]
    if args.n_tau is not None:
        args.overrides = list(args.overrides) + [f"resolvent.n_tau={args.n_tau}"]
    return run_stages(args, ["normalize", "build", "lowfreq"], lambda result: result.manifest["derived"]["lowfreq"])
