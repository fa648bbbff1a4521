"""
情境服務模組 - 管線編排：正規化 → 建構 → 演化/預解式 → 擬合 → 報告
"""
import importlib.metadata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from config import STAGES, ScenarioConfig, settings
from services.evolution_service import CauchyData, EvolutionService, TimeSeries
from services.interfaces import ArtifactSinkInterface
from services.metric_service import MetricService, MetricSpec, NormalizedMetric, build_preset
from services.operator_service import OperatorService, RadialOperator
from services.poisson_service import PoissonService
from services.report_service import ReportService
from services.resolvent_service import ResolventService, geometric_tau_grid, zlambda_source
from services.synthesis_service import SynthesisPlan, SynthesisService
from services.tail_service import DecayEntry, TailFit, TailService, huygens_floor
from utils.common.errors import StageFailure, ValidationFailure, WavetailError
from utils.common.logging_utils import get_logger, log_duration
from utils.numerics.grid import Grid1D
from utils.radial import profiles as prof

# 配置日誌
logger = get_logger("scenario_service")

FOURIER_CONVENTION = "u_hat(tau) = int exp(-i t tau) u dt; u(t) = (1/2pi) int exp(i t tau) u_hat dtau"
LIBRARIES = ("numpy", "scipy", "pandas", "pydantic", "pydantic-settings", "python-dotenv", "jinja2", "Markdown")
CONVERGENCE_HORIZON = 50.0
OPERATOR_STAGES = {"evolve", "convergence", "resolvent", "expand", "lowfreq", "bounds", "synthesize", "fit"}


def library_versions() -> Dict[str, str]:
    versions = {}
    for name in LIBRARIES:
        try:
            versions[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def build_data(cfg: ScenarioConfig, ell: int) -> CauchyData:
    """由 data 區段建立初始資料"""
    d = cfg.data
    a, b = d.support

    def shape(amplitude: float) -> prof.RadialProfile:
        if d.family == "gaussian":
            return prof.gaussian(d.center, d.width, amplitude)
        if d.family == "bump":
            return prof.bump(a, b, amplitude)
        if d.family == "plateau":
            return prof.plateau(a, b, amplitude)
        return prof.step_ball(b, amplitude)

    u1 = shape(d.velocity_amplitude) if d.velocity_amplitude else prof.zero("u1")
    return CauchyData(u0=shape(d.amplitude), u1=u1, ell=ell, support=(a, b))


@dataclass
class ScenarioResult:
    """一次情境執行的結果"""

    config: ScenarioConfig
    location: str
    manifest: Dict[str, Any]
    series: Dict[str, TimeSeries] = field(default_factory=dict)
    fits: Dict[str, TailFit] = field(default_factory=dict)
    report: Optional[pd.DataFrame] = None
    completed: bool = True


class ScenarioService:
    """情境編排服務"""

    def __init__(self, metric_service: MetricService, operator_service: OperatorService,
                 poisson_service: PoissonService, resolvent_service: ResolventService,
                 synthesis_service: SynthesisService, tail_service: TailService,
                 report_service: ReportService, max_workers: Optional[int] = None):
        """
        初始化情境服務

        Args:
            各模組服務實例
            max_workers: 各 ℓ 演化的平行度（預設取 AppSettings.max_workers）
        """
        self.metric_service = metric_service
        self.operator_service = operator_service
        self.poisson_service = poisson_service
        self.resolvent_service = resolvent_service
        self.synthesis_service = synthesis_service
        self.tail_service = tail_service
        self.report_service = report_service
        self.max_workers = max_workers or settings.max_workers

    def build_metric(self, cfg: ScenarioConfig) -> MetricSpec:
        m = cfg.metric
        return build_preset(m.preset, kappa=m.kappa, epsilon=m.epsilon, mass=m.mass,
                            cutoff_scale=m.cutoff_scale, profile_dir=m.profile_dir)

    def metric_for(self, cfg: ScenarioConfig) -> MetricService:
        if cfg.metric.extent == self.metric_service.extent:
            return self.metric_service
        return MetricService(extent=cfg.metric.extent, m_max=self.metric_service.m_max,
                             j_max=self.metric_service.j_max)

    def grid(self, cfg: ScenarioConfig) -> Grid1D:
        return Grid1D(h=cfg.grid.h, r_max=cfg.grid.r_max, order=cfg.grid.order)

    def evolution_service(self, cfg: ScenarioConfig) -> EvolutionService:
        return EvolutionService(self.operator_service, cfl_factor=cfg.run.cfl_factor)

    @staticmethod
    def resolve_stages(requested) -> List[str]:
        """依管線順序排列所需階段；任何算子層階段都會帶入 normalize 與 build"""
        wanted = set(requested)
        if wanted & OPERATOR_STAGES:
            wanted |= {"normalize", "build"}
        if "report" in wanted:
            wanted.add("fit")
        if "fit" in wanted:
            wanted |= {"normalize", "build", "evolve"}
        return [s for s in STAGES if s in wanted]

    def default_window(self, cfg: ScenarioConfig, observer: float):
        if cfg.run.fit_window is not None:
            return tuple(cfg.run.fit_window)
        t_max = cfg.run.t_max
        start = max(0.3 * t_max, 4.0 * (cfg.data.support[1] + observer))
        return start, 0.95 * t_max

    def run_scenario(self, cfg: ScenarioConfig, sink: ArtifactSinkInterface) -> ScenarioResult:
        """
        依 run.stages 執行管線並寫出成果與清單

        Args:
            cfg: 已驗證的情境配置
            sink: 成果輸出平台

        Returns:
            ScenarioResult: 序列、擬合、摘要與清單

        Raises:
            StageFailure: 任何階段失敗（輸出已標記 INCOMPLETE）
        """
        stages = self.resolve_stages(cfg.run.stages)
        grid = self.grid(cfg)
        manifest: Dict[str, Any] = {
            "package": {"name": settings.app_name, "version": settings.app_version},
            "libraries": library_versions(),
            "config": cfg.model_dump(mode="json"),
            "fourier_convention": FOURIER_CONVENTION,
            "grid": grid.describe(),
            "stages": stages,
            "derived": {},
        }
        result = ScenarioResult(config=cfg, location=sink.location, manifest=manifest)
        state: Dict[str, Any] = {}

        def stage(name: str, action: Callable[[], None]):
            if name not in stages:
                return
            try:
                with log_duration(logger, f"Stage '{name}'"):
                    action()
            except WavetailError as e:
                logger.error(f"Stage '{name}' failed: {e}")
                manifest["failed_stage"] = name
                manifest["failure"] = str(e)
                sink.mark_incomplete(name, str(e))
                sink.write_manifest(manifest)
                result.completed = False
                raise StageFailure(name, str(e), e) from e

        spec = self.build_metric(cfg)
        state["spec"] = spec
        stage("check", lambda: self._check(self.metric_for(cfg), spec, sink, manifest))
        stage("normalize", lambda: state.update(nm=self._normalize(self.metric_for(cfg), spec, grid, manifest)))
        stage("build", lambda: state.update(self._build(state["nm"], cfg, grid, sink, manifest)))
        stage("evolve", lambda: self._evolve(state, cfg, grid, sink, manifest, result))
        stage("convergence", lambda: self._convergence(state, cfg, grid, sink, manifest))
        stage("resolvent", lambda: self._resolvent(state, cfg, grid, sink, manifest))
        stage("expand", lambda: self._expand(state, cfg, grid, sink, manifest))
        stage("lowfreq", lambda: self._lowfreq(state, cfg, grid, sink, manifest))
        stage("bounds", lambda: self._bounds(state, cfg, grid, sink, manifest))
        stage("synthesize", lambda: self._synthesize(state, cfg, grid, sink, manifest, result))
        stage("fit", lambda: self._fit(state, cfg, sink, manifest, result))
        stage("report", lambda: self._report(state, cfg, sink, manifest, result))
        sink.write_manifest(manifest)
        result.manifest = manifest
        logger.info(f"Scenario '{cfg.output.name}' complete at {sink.location}")
        return result

    # 各階段
    def _check(self, metric: MetricService, spec: MetricSpec, sink: ArtifactSinkInterface, manifest: Dict[str, Any]):
        report = metric.check_assumptions(spec)
        rows = [row for rep in report.seminorms.values() for row in rep.rows()]
        sink.write_frame("metric_check", pd.DataFrame(rows), "metric_check", 1)
        manifest["metric_check"] = report.summary()
        if not report.passed:
            raise ValidationFailure(f"metric '{spec.name}' failed assumption checks: {report.summary()}")

    def _normalize(self, metric: MetricService, spec: MetricSpec, grid: Grid1D, manifest: Dict[str, Any]) -> NormalizedMetric:
        nm = metric.normalize(spec)
        residuals = metric.normalization_residuals(nm, grid.nodes)
        manifest["derived"].update(cutoff_radius=nm.cutoff_radius, matching_shift=nm.matching_shift,
                                   normalization_residuals=residuals, normalization_extent=nm.extent)
        return nm

    def _build(self, nm: MetricSpec, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
               manifest: Dict[str, Any]) -> Dict[str, Any]:
        oc = self.operator_service.build_operator(nm)
        rops: Dict[int, RadialOperator] = {}
        for ell in cfg.data.ells:
            rop = self.operator_service.radial_reduce(oc, ell)
            rops[ell] = rop
            sink.write_frame(f"coefficients_l{ell}", self.operator_service.dump_coefficients(rop, grid),
                             "operator_coefficients", 1)
        manifest["derived"]["node_count"] = grid.n_intervals + 1
        return {"oc": oc, "rops": rops}

    def _evolve(self, state, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
                manifest: Dict[str, Any], result: ScenarioResult):
        evolution = self.evolution_service(cfg)
        t_max = cfg.run.t_max

        data0 = build_data(cfg, 0)
        if data0.smooth:
            manifest["derived"]["data_norms"] = data0.record_norms(grid, cfg.metric.effective_kappa)

        def run(ell: int):
            data = build_data(cfg, ell)
            return ell, evolution.run(state["rops"][ell], data, t_max, cfg.run.observers, grid, cfg.run.dt_out)

        ells = list(cfg.data.ells)
        if self.max_workers > 1 and len(ells) > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                runs = list(pool.map(run, ells))
        else:
            runs = [run(ell) for ell in ells]

        evolution_meta = {}
        for ell, evolved in runs:
            evolution_meta[f"l{ell}"] = evolved.grid_meta
            for s in evolved.series:
                key = f"series_l{ell}_r{s.observer_r:g}"
                result.series[key] = s
                sink.write_frame(key, s.frame(), "observer_series", 1)
            sink.write_frame(f"energy_l{ell}", evolved.series[0].energy_frame(), "energy_trace", 1)
        manifest["derived"]["evolution"] = evolution_meta
        state["evolved"] = True

    def _convergence(self, state, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
                     manifest: Dict[str, Any]):
        evolution = self.evolution_service(cfg)
        observer = cfg.run.observers[0]
        horizon = min(cfg.run.t_max, CONVERGENCE_HORIZON)
        base = Grid1D(h=4.0 * grid.h, r_max=grid.r_max, order=grid.order)
        orders = {}
        rows = []
        for ell in cfg.data.ells:
            study = evolution.convergence_study(state["rops"][ell], build_data(cfg, ell), horizon, observer, base)
            orders[ell] = study.observed_order
            rows.append({"ell": ell, "observer_r": observer, "order": study.observed_order,
                         "d1": study.differences[0], "d2": study.differences[1], "flags": "; ".join(study.flags)})
        sink.write_frame("convergence", pd.DataFrame(rows), "convergence", 1)
        manifest["derived"]["convergence"] = {f"l{ell}": order for ell, order in orders.items()}
        state["orders"] = orders

    def _resolvent(self, state, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
                   manifest: Dict[str, Any]):
        g = zlambda_source(cfg.resolvent.lam)
        rows = []
        for ell, rop in state["rops"].items():
            for tau in cfg.resolvent.tau_set:
                sol = self.resolvent_service.solve_resolvent(rop, tau, g, grid)
                rows.append({"ell": ell, "tau": tau, "defect": sol.defect,
                             "radiation_residual": sol.radiation_residual, "le_tau_norm": sol.le_tau_norm,
                             "amplitude_re": sol.outgoing_amplitude.real,
                             "amplitude_im": sol.outgoing_amplitude.imag, "method": sol.method})
        sink.write_frame("resolvent", pd.DataFrame(rows), "resolvent_solutions", 1)
        manifest["derived"]["resolvent_taus"] = list(cfg.resolvent.tau_set)

    def _expand(self, state, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
                manifest: Dict[str, Any]):
        lam = cfg.resolvent.lam
        g = zlambda_source(lam)
        expansion = self.poisson_service.zero_resolvent_expand(state["oc"], g, lam, grid)
        rop0 = self.operator_service.radial_reduce(state["oc"], 0)
        direct = self.poisson_service.direct_static_solve(rop0, g, grid)
        window = (expansion.r >= 2.0) & (expansion.r <= 0.5 * grid.extent)
        # 自舉結果與獨立的帶狀直接解比對
        agreement = float(np.max(np.abs(expansion.direct[window] - direct[window]))
                          / max(float(np.max(np.abs(direct[window]))), 1e-300))
        sink.write_frame(f"expansion_lambda{lam}", expansion.coefficient_frame(), "expansion_coefficients", 1)
        sink.write_frame(f"expansion_profiles_lambda{lam}", expansion.profile_frame(), "expansion_profiles", 1)
        manifest["derived"]["expansion"] = {"lambda": lam, "bootstrap_radius": expansion.cutoff_radius,
                                            "sweeps": expansion.sweeps, "direct_agreement": agreement,
                                            "reconstruction_error": expansion.reconstruction_error(2.0),
                                            "e0_partial_sums": [float(s) for s in expansion.e0_partial_sums()],
                                            "radial_monopole": expansion.radial_monopole}

    def _lowfreq(self, state, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
                 manifest: Dict[str, Any]):
        r = cfg.resolvent
        taus = geometric_tau_grid(r.tau0, r.n_tau)
        rop = state["rops"].get(0) or self.operator_service.radial_reduce(state["oc"], 0)
        report = self.resolvent_service.low_freq_scan(rop, zlambda_source(r.lam), r.lam, taus, grid,
                                                      kappa=cfg.metric.effective_kappa,
                                                      probe_radius=r.probe_radius)
        sink.write_frame(f"lowfreq_lambda{r.lam}", report.frame(), "lowfreq_scan", 1)
        if report.epsilon_profile is not None:
            sink.write_frame(f"lowfreq_log_template_lambda{r.lam}", report.epsilon_profile, "log_template", 1)
        manifest["derived"]["lowfreq"] = {"lambda": r.lam, "slope": report.fitted_slope, "taus": taus,
                                          "log_fit_r2": report.log_fit_r2, "flags": report.flags}

    def _bounds(self, state, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
                manifest: Dict[str, Any]):
        rop = state["rops"].get(0) or self.operator_service.radial_reduce(state["oc"], 0)
        frame = self.resolvent_service.pointwise_bound_check(rop, zlambda_source(cfg.resolvent.lam),
                                                             cfg.resolvent.tau_set, grid)
        sink.write_frame("pointwise_bounds", frame, "pointwise_bounds", 1)
        manifest["derived"]["pointwise_bounded"] = bool(frame["bounded"].all())

    def _synthesize(self, state, cfg: ScenarioConfig, grid: Grid1D, sink: ArtifactSinkInterface,
                    manifest: Dict[str, Any], result: ScenarioResult):
        s = cfg.synthesis
        t_list = np.arange(s.t_start, cfg.run.t_max + 0.5 * cfg.run.dt_out, cfg.run.dt_out)
        observer = cfg.run.observers[0]
        meta = {}
        for ell, rop in state["rops"].items():
            data = build_data(cfg, ell)
            if s.n_tau is None:
                plan = SynthesisPlan.for_horizon(data, cfg.run.t_max, tau_max=s.tau_max, taper=s.taper,
                                                 damping=s.damping)
            else:
                plan = SynthesisPlan(data=data, tau_max=s.tau_max, n_tau=s.n_tau, taper=s.taper,
                                     damping=s.damping, ell=ell)
            if s.plancherel:
                meta[f"plancherel_l{ell}"] = self.synthesis_service.plancherel_check(rop, data, observer, plan, grid)
            samples = self.synthesis_service.sample_frequencies(rop, data, observer, plan, grid)
            windows = self.synthesis_service.split_contributions(rop, data, t_list, observer, plan, grid, samples)
            total = self.synthesis_service.synthesize(rop, data, t_list, observer, plan, grid, samples)
            key = f"synthesized_l{ell}_r{total.observer_r:g}"
            result.series[key] = total
            frame = self.synthesis_service.frame({"u": total, **windows})
            sink.write_frame(key, frame, "synthesized_series", 1)
            meta[f"plan_l{ell}"] = plan.describe()
        manifest["derived"]["synthesis"] = meta

    def _fit(self, state, cfg: ScenarioConfig, sink: ArtifactSinkInterface, manifest: Dict[str, Any],
             result: ScenarioResult):
        if not state.get("evolved"):
            raise ValidationFailure("stage 'fit' needs the 'evolve' stage in run.stages")
        kappa = None if cfg.metric.is_flat else cfg.metric.effective_kappa
        entries: List[DecayEntry] = []
        orders = state.get("orders", {})
        fits_meta = {}
        for key, series in result.series.items():
            if not key.startswith("series_"):
                continue
            ell = int(key.split("_")[1][1:])
            entry = DecayEntry(kappa=kappa or 0, ell=ell, observer_r=series.observer_r,
                               convergence_order=orders.get(ell), label=key)
            if kappa is None:
                after = cfg.run.floor_after or (cfg.data.support[1] + series.observer_r + 2.0 * cfg.data.width)
                entry.floor_ratio = huygens_floor(series, after)
                fits_meta[key] = {"floor_ratio": entry.floor_ratio, "t_after": after}
            else:
                window = self.default_window(cfg, series.observer_r)
                entry.fit_u = self.tail_service.fit_tail(series, window, "u", kappa)
                entry.fit_dtu = self.tail_service.fit_tail(series, window, "dtu", kappa)
                result.fits[f"{key}_u"] = entry.fit_u
                result.fits[f"{key}_dtu"] = entry.fit_dtu
                sink.write_frame(f"lpi_{key}", pd.DataFrame({
                    "t": series.times, "abs_u": np.abs(series.u_values)}).merge(
                        entry.fit_u.lpi_frame(), on="t", how="left"), "lpi_curve", 1)
                fits_meta[key] = {"p_u": entry.fit_u.p_infinity, "p_dtu": entry.fit_dtu.p_infinity,
                                  "uncertainty": entry.fit_u.p_uncertainty, "window": list(window)}
            entries.append(entry)
        result.report = self.tail_service.decay_report(entries)
        manifest["derived"]["fits"] = fits_meta

    def _report(self, state, cfg: ScenarioConfig, sink: ArtifactSinkInterface, manifest: Dict[str, Any],
                result: ScenarioResult):
        if result.report is None:
            raise ValidationFailure("stage 'report' needs the 'fit' stage in run.stages")
        ladder = self.tail_service.exponent_ladder(result.report)
        notes = [f"metric preset {cfg.metric.preset}, kappa={cfg.metric.effective_kappa}",
                 f"grid h={cfg.grid.h}, r_max={cfg.grid.r_max}, order={cfg.grid.order}"]
        self.report_service.publish(sink, result.report, cfg.output.name, ladder, notes)
