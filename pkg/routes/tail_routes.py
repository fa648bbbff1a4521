"""
尾部路由模組 - fit-tail、report 子命令
"""
import argparse

import numpy as np
import pandas as pd

from dependencies import get_file_service, get_scenario_service, get_tail_service
from routes.base import CommandRouter, emit, run_stages, scenario_from_args, sink_for
from services.evolution_service import TimeSeries
from utils.common.errors import EXIT_OK, EXIT_VALIDATION, ValidationFailure, WavetailError
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("tail_routes")

# 創建路由器
router = CommandRouter()

FIT_ARGUMENTS = [
    (("--series",), {"help": "fit an existing observer series CSV instead of evolving"}),
    (("--window",), {"type": float, "nargs": 2, "metavar": ("T_LO", "T_HI"), "help": "fit window"}),
]


def _fit_summary(result):
    return {key: {"p_infinity": fit.p_infinity, "uncertainty": fit.p_uncertainty, "target": fit.target,
                  "passed": fit.passed, "window": list(fit.window)}
            for key, fit in result.fits.items()}


def fit_series_file(args: argparse.Namespace) -> int:
    """
    擬合既有的觀測序列 CSV（欄位 t, u, dtu）

    Returns:
        int: 退出碼
    """
    try:
        cfg = scenario_from_args(args, [])
        frame, schema = get_file_service().read_csv(args.series)
        missing = {"t", "u", "dtu"} - set(frame.columns)
        if missing:
            raise ValidationFailure(f"series file {args.series} lacks columns {sorted(missing)} (schema {schema})")
        observer = cfg.run.observers[0]
        series = TimeSeries(observer, frame["t"].to_numpy(float), frame["u"].to_numpy(float),
                            frame["dtu"].to_numpy(float), np.zeros(0), {}, label="file")
        window = tuple(args.window) if args.window else get_scenario_service().default_window(cfg, observer)
        kappa = None if cfg.metric.is_flat else cfg.metric.effective_kappa
        tails = get_tail_service()
        fits = {quantity: tails.fit_tail(series, window, quantity, kappa) for quantity in ("u", "dtu")}
        sink = sink_for(cfg)
        sink.write_frame("lpi_file", pd.DataFrame({"t": fits["u"].lpi_t, "p_u": fits["u"].lpi_p}),
                         "lpi_curve", 1)
        sink.write_manifest({"source": args.series, "schema": schema, "window": list(window), "kappa": kappa,
                             "fits": {q: {"p_infinity": f.p_infinity, "uncertainty": f.p_uncertainty,
                                          "flags": f.flags} for q, f in fits.items()}})
    except WavetailError as e:
        logger.error(f"Tail fit of {args.series} failed: {e}")
        return e.exit_code
    except (ValueError, OSError) as e:
        logger.error(f"Cannot fit {args.series}: {e}")
        return EXIT_VALIDATION
    emit({q: {"p_infinity": f.p_infinity, "uncertainty": f.p_uncertainty, "target": f.target,
              "passed": f.passed} for q, f in fits.items()})
    return EXIT_OK


@router.command("fit-tail", help="Fit late-time decay exponents by local power index", arguments=FIT_ARGUMENTS)
def fit_tail(args: argparse.Namespace) -> int:
    if args.series:
        return fit_series_file(args)
    if args.window:
        args.overrides = list(args.overrides) + [f"run.fit_window={list(args.window)}"]
    return run_stages(args, ["check", "normalize", "build", "evolve", "fit"], _fit_summary)


@router.command("report", help="Run the full pipeline and render the decay summary",
                arguments=[(("--convergence",), {"action": "store_true",
                                                 "help": "include the convergence study so rows can verify"})])
def report(args: argparse.Namespace) -> int:
    """
    完整管線並產生衰減摘要（CSV、Markdown、HTML）

    Rows stay "unverified" unless the convergence study ran.
    """
    stages = ["check", "normalize", "build", "evolve", "fit", "report"]
    if args.convergence:
        stages.insert(4, "convergence")

    def summarize(result):
        columns = ["label", "p_u", "p_dtu", "target", "status"]
        frame = result.report
        return {"rows": frame[[c for c in columns if c in frame.columns]].to_dict(orient="records")}

    return run_stages(args, stages, summarize)
