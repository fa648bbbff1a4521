"""
Poisson 服務模組 - 徑向 Poisson 反演、多極展開與零頻預解式的自舉展開

Sign convention: (−Δ)^{-1} uses the kernel 1/(4π|x−y|), so −Δv = g and a
radial source of total mass ∫g dy has far field (∫g dy)/(4πr).
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sparse
from scipy.integrate import simpson
from scipy.sparse.linalg import splu

from services.operator_service import OperatorCoeffs, OperatorService, RadialOperator
from utils.common.errors import NumericalFailure, ValidationFailure
from utils.common.logging_utils import get_logger
from utils.numerics.grid import Grid1D
from utils.numerics.quadrature import GAUSS_NODES, CumulativeIntegral, gauss_nodes, panel_edges
from utils.radial import profiles as prof
from utils.radial.cutoffs import beta, chi_above, japanese_bracket
from utils.radial.profiles import RadialProfile, SymbolClass

# 配置日誌
logger = get_logger("poisson_service")

DEFAULT_EXTENT = 2.0 ** 14
DAMPING = 0.5
CONTRACTION_LIMIT = 0.9
MAX_DOUBLINGS = 2


def far_cutoff(m: int, r: np.ndarray) -> np.ndarray:
    """χ_{>2^{m+2}}(r): zero on the support of β_m's neighbourhood, one beyond 2^{m+3}."""
    return np.asarray(chi_above(np.asarray(r, dtype=float), 2.0 ** (m + 2)), dtype=float)


def _decay_exponent(g: RadialProfile, extent: float) -> Optional[float]:
    far = np.abs(g.eval(np.array([0.5 * extent, extent])))
    if np.any(far < 1e-300):
        return None
    return float(np.log(far[1] / far[0]) / np.log(2.0))


def radial_poisson_inverse(g: RadialProfile, q_exponent: int, extent: Optional[float] = None) -> RadialProfile:
    """
    徑向 Poisson 反演 −Δv = g

    q ≥ 3 uses v = M(r)/r + ∫_r^∞ ρg dρ and q = 2 uses v = M(r)/r − ∫_0^r ρg dρ,
    with M(r) = ∫_0^r ρ²g dρ. Both satisfy v' = −M/r².

    Args:
        g: 徑向源，衰減 r^{-q}
        q_exponent: 衰減指數 q ≥ 2
        extent: 無緊支撐時的求積外半徑

    Returns:
        RadialProfile: v，含一階與二階精確導數

    Raises:
        ValidationFailure: q < 2 或源的尾部衰減慢於宣稱
    """
    if q_exponent < 2:
        raise ValidationFailure(f"Poisson inversion needs q_exponent >= 2, got {q_exponent}")
    hint = g.support_hint
    compact = hint is not None and np.isfinite(hint[1])
    if compact:
        extent = float(hint[1])
    else:
        extent = float(extent or DEFAULT_EXTENT)
        measured = _decay_exponent(g, extent)
        if measured is not None and measured > -q_exponent + 0.5:
            raise ValidationFailure(
                f"source '{g.name}' decays like r^{measured:.2f}, slower than the declared r^-{q_exponent}")
    breaks = [b for b in (hint or ()) if np.isfinite(b)]
    edges = panel_edges(extent, breakpoints=breaks)
    mass = CumulativeIntegral(lambda s: s * s * g.eval(s), edges)
    first = CumulativeIntegral(lambda s: s * g.eval(s), edges)

    g_end = 0.0 if compact else float(g.eval(extent))
    # 尾端以實測衰減 r^{-p} 解析補齊
    p = float(q_exponent) if compact or measured is None else max(-measured, float(q_exponent) - 0.5)
    first_tail = g_end * extent ** 2 / (p - 2.0) if q_exponent >= 3 else 0.0
    mass_tail = g_end * extent ** 3 / (p - 3.0) if p > 3.0 + 1e-9 else 0.0
    mass_total = mass.total + mass_tail

    def enclosed(r):
        inside = np.minimum(r, extent)
        return np.where(r > extent, mass_total, mass(inside))

    def value(r):
        r = np.abs(np.asarray(r, dtype=float))
        shape = r.shape
        r = r.ravel()
        inside = np.minimum(r, extent)
        safe = np.where(r > 0, r, 1.0)
        M = enclosed(r)
        shell = np.where(r > 0, M / safe, 0.0)
        if q_exponent >= 3:
            outer = first.total - first(inside) + first_tail
            beyond = first_tail * (extent / np.maximum(r, extent)) ** (p - 2.0)
            v = shell + np.where(r > extent, beyond, outer)
        else:
            v = shell - first(inside) - np.where(r > extent, g_end * extent ** 2 * np.log(safe / extent), 0.0)
        return v.reshape(shape)

    def d1(r):
        r = np.abs(np.asarray(r, dtype=float))
        shape = r.shape
        r = r.ravel()
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, -enclosed(r) / safe ** 2, 0.0).reshape(shape)

    def d2(r):
        r = np.abs(np.asarray(r, dtype=float))
        shape = r.shape
        r = r.ravel()
        tiny = r < 1e-6
        safe = np.where(tiny, 1.0, r)
        local = g.eval(r)
        return np.where(tiny, -local / 3.0, -local + 2.0 * enclosed(r) / safe ** 3).reshape(shape)

    claimed = SymbolClass("S_log") if q_exponent == 2 else SymbolClass("S_rad", -1.0)
    return RadialProfile(value, max_order=2, derivatives={1: d1, 2: d2}, claimed=claimed,
                         name=f"poisson({g.name})")


@dataclass
class ExpansionR0:
    """
    零頻預解式展開 v = Σ_j (c_j∇^j⟨r⟩^{-1} + e_j(∇^j⟨r⟩^{-1})⟨r⟩^{j−λ+1}) + d∇^{λ−1}⟨r⟩^{-1} + q

    For radial sources every term with j ≥ 1 vanishes outside r = 2, so only
    c_0, e_0 and (for λ = 1) d carry content. q is assembled from the annulus
    fields v_m, so reconstruct() against the direct solution is a genuine check.

    Attributes:
        taylor_remainder: Σ_m χ_{>m+2}(v_m − c_{0,m}⟨r⟩^{-1})
        coefficient_history: 自舉每一輪的主係數（λ ≥ 2 為 c_0，λ = 1 為外緣的 d）
        radial_remainder: λ = κ+1 時徑向項的 e'(r)，其反演為 c'⟨r⟩^{-1} + e'⟨r⟩^{-κ-1}
        radial_monopole: 上述的 c'
    """

    lam: int
    r: np.ndarray
    c: List[float]
    e: List[np.ndarray]
    d: np.ndarray
    q: np.ndarray
    direct: np.ndarray
    class_of_e0: str
    annulus_moments: np.ndarray
    cutoff_radius: float = 0.0
    sweeps: int = 0
    contraction: List[float] = field(default_factory=list)
    taylor_remainder: Optional[np.ndarray] = None
    coefficient_history: List[float] = field(default_factory=list)
    radial_remainder: Optional[np.ndarray] = None
    radial_monopole: Optional[float] = None

    def reconstruct(self) -> np.ndarray:
        br = japanese_bracket(self.r)
        total = np.array(self.q, dtype=float)
        if self.c:
            total = total + self.c[0] / br
        if self.e:
            total = total + self.e[0] * br ** (-float(self.lam))
        if self.lam == 1:
            total = total + self.d / br
        return total

    def reconstruction_error(self, r_min: float = 0.0, r_max: float = np.inf) -> float:
        mask = (self.r >= r_min) & (self.r <= r_max)
        scale = max(float(np.max(np.abs(self.direct[mask]))), 1e-300)
        return float(np.max(np.abs(self.reconstruct()[mask] - self.direct[mask])) / scale)

    def e0_partial_sums(self, r_min: float = 2.0, r_max: Optional[float] = None) -> np.ndarray:
        """Running Σ_m sup_{[2^m, 2^{m+1}]}|e_0| over the dyadic annuli inside [r_min, r_max]."""
        if not self.e:
            return np.zeros(0)
        r_max = float(self.r[-1]) if r_max is None else r_max
        m = int(np.ceil(np.log2(max(r_min, 1.0))))
        sups = []
        while 2.0 ** (m + 1) <= r_max:
            mask = (self.r >= 2.0 ** m) & (self.r <= 2.0 ** (m + 1))
            if np.any(mask):
                sups.append(float(np.max(np.abs(self.e[0][mask]))))
            m += 1
        return np.cumsum(sups)

    def coefficient_frame(self) -> pd.DataFrame:
        rows = [{"j": j, "c_j": float(c), "e_j_sup": float(np.max(np.abs(self.e[j]))) if j < len(self.e) else 0.0}
                for j, c in enumerate(self.c)]
        rows.append({"j": self.lam - 1, "c_j": float("nan"), "e_j_sup": float(np.max(np.abs(self.d)))})
        return pd.DataFrame(rows, columns=["j", "c_j", "e_j_sup"])

    def profile_frame(self) -> pd.DataFrame:
        e0 = self.e[0] if self.e else np.zeros_like(self.r)
        frame = pd.DataFrame({"r": self.r, "e_0": e0, "d": self.d, "q": self.q, "direct": self.direct,
                              "reconstructed": self.reconstruct()})
        if self.radial_remainder is not None:
            frame["e_radial"] = self.radial_remainder
        return frame


def _annulus_count(extent: float) -> int:
    return max(int(np.floor(np.log2(max(extent, 2.0)))), 1)


def _expansion_terms(r: np.ndarray, moments: np.ndarray, lam: int):
    """(c, e, d) from per-annulus monopole moments c_{0,m}."""
    br = japanese_bracket(r)
    far = np.array([far_cutoff(m, r) for m in range(len(moments))])
    captured = moments @ far
    missing = moments @ (1.0 - far)
    if lam == 1:
        return [], [], captured
    c = [float(np.sum(moments))] + [0.0] * (lam - 2)
    e0 = -br ** (lam - 1) * missing
    e = [e0] + [np.zeros_like(r) for _ in range(lam - 2)]
    return c, e, np.zeros_like(r)


def _remainder(r: np.ndarray, pieces: Sequence[np.ndarray], moments: np.ndarray):
    """
    q = Σ_m [χ_{<m+2}v_m + χ_{>m+2}(v_m − c_{0,m}⟨r⟩^{-1})] and its Taylor part

    Pieces past the last moment (the source tail) have no monopole subtracted.
    """
    br = japanese_bracket(r)
    near = np.zeros_like(r)
    taylor = np.zeros_like(r)
    for m, v in enumerate(pieces):
        cut = far_cutoff(m, r)
        near = near + (1.0 - cut) * v
        taylor = taylor + cut * (v - moments[m] / br if m < len(moments) else v)
    return near + taylor, taylor


class PoissonService:
    """Poisson 服務：自由多極展開與擾動自舉"""

    def __init__(self, operator_service: OperatorService, gauss_nodes_per_annulus: int = GAUSS_NODES):
        self.operator_service = operator_service
        self.gauss_nodes_per_annulus = gauss_nodes_per_annulus
        logger.info("Poisson service initialized")

    radial_poisson_inverse = staticmethod(radial_poisson_inverse)

    def annulus_moments(self, g: RadialProfile, m_max: int) -> np.ndarray:
        """c_{0,m} = ∫ β_m(ρ)g(ρ)ρ² dρ on eight Gauss panels per annulus support."""
        out = np.zeros(m_max + 1)
        for m in range(m_max + 1):
            lo = 0.0 if m <= 1 else 2.0 ** m
            hi = 2.0 ** (m + 2)
            edges = np.linspace(lo, hi, 9)
            x, w = gauss_nodes(edges[:-1], edges[1:], self.gauss_nodes_per_annulus)
            out[m] = float(np.sum(w * beta(m, x) * g.eval(x) * x * x))
        return out

    @staticmethod
    def annulus_piece(g: RadialProfile, m: int) -> RadialProfile:
        """g_m = β_m·g，支撐於 [2^m, 2^{m+2}]"""
        return RadialProfile(lambda s: beta(m, np.abs(s)) * g.eval(s), max_order=4,
                             support_hint=(0.0 if m <= 1 else 2.0 ** m, 2.0 ** (m + 2)), name=f"{g.name}_{m}")

    def multipole_expansion(self, g: Union[RadialProfile, np.ndarray], lam: int, r: Optional[np.ndarray] = None,
                            extent: Optional[float] = None,
                            inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> ExpansionR0:
        """
        自由情形 (P² = 0) 的多極展開

        A profile source is cut into g_m = β_m g and every piece goes through
        radial_poisson_inverse; whatever lies past the last annulus is inverted as
        one more piece. A sampled source is a density on r and needs `inverse`,
        the discrete (−Δ)^{-1} applied row by row to stacked densities.

        Args:
            g: 徑向源剖面，或 r 上的取樣密度
            lam: 衰減階數 λ ≥ 1
            r: 取樣半徑（剖面預設為 [0, 1024] 的均勻取樣）
            extent: 直接解的求積外半徑
            inverse: 取樣源所用的離散反演

        Returns:
            ExpansionR0: 展開係數、剖面與由分塊組成的餘項

        Raises:
            ValidationFailure: λ < 1、矩發散，或取樣源缺少半徑與反演
        """
        if lam < 1:
            raise ValidationFailure(f"expansion order lambda must be >= 1, got {lam}")
        if isinstance(g, RadialProfile):
            r, direct, moments, pieces = self._profile_pieces(g, lam, r, extent)
        else:
            if r is None or inverse is None:
                raise ValidationFailure("a sampled source needs its radii and a discrete inverse")
            r = np.asarray(r, dtype=float)
            density = np.asarray(g, dtype=float)
            if density.shape != r.shape:
                raise ValidationFailure("sampled source does not match its radii")
            moments = self._sampled_moments(r, density)
            pieces = list(inverse(np.array([beta(m, r) * density for m in range(len(moments))])))
            direct = inverse(density[None, :])[0]
        c, e, d = _expansion_terms(r, moments, lam)
        q, taylor = _remainder(r, pieces, moments)
        expansion = ExpansionR0(lam=lam, r=r, c=c, e=e, d=d, q=q, direct=direct, class_of_e0="l1S(1)",
                                annulus_moments=moments, taylor_remainder=taylor)
        logger.debug(f"Multipole expansion at lambda={lam}: c={c[:1]}, {len(pieces)} pieces")
        return expansion

    def _profile_pieces(self, g: RadialProfile, lam: int, r: Optional[np.ndarray], extent: Optional[float]):
        r = np.linspace(0.0, 1024.0, 4097) if r is None else np.asarray(r, dtype=float)
        extent = float(extent or DEFAULT_EXTENT)
        compact = bool(g.support_hint and np.isfinite(g.support_hint[1]))
        if lam >= 2 and not compact:
            measured = _decay_exponent(g, extent)
            if measured is not None and measured > -3.0 - 0.25:
                raise ValidationFailure(
                    f"monopole moment diverges: source decays like r^{measured:.2f} but lambda={lam} needs faster than r^-3")
        direct = radial_poisson_inverse(g, lam + 2, extent).sample(r)
        m_max = _annulus_count(extent) + 4
        moments = self.annulus_moments(g, m_max)
        pieces = [radial_poisson_inverse(self.annulus_piece(g, m), 3, extent).sample(r) for m in range(m_max + 1)]
        outer = 2.0 ** (m_max + 1)
        if not compact or g.support_hint[1] > outer:
            tail = RadialProfile(lambda s: np.asarray(chi_above(japanese_bracket(np.abs(s)), outer)) * g.eval(s),
                                 max_order=2, name=f"{g.name}_tail")
            pieces.append(radial_poisson_inverse(tail, lam + 2, 2.0 ** (m_max + 6)).sample(r))
        logger.info(f"Multipole expansion of '{g.name}' at lambda={lam}: c_0,m summed to {float(np.sum(moments)):.6e}")
        return r, direct, moments, pieces

    def split_low_high(self, g: RadialProfile, m: int, r: np.ndarray, extent: Optional[float] = None):
        """
        第 m 個環形分量的遠近分解 v_m = v_m^{low} + v_m^{high}

        v_m^{low} = χ_{<2^{m+2}}·v_m; v_m^{high} = χ_{>2^{m+2}}·v_m is the part the
        Taylor expansion of the kernel controls.
        """
        v = radial_poisson_inverse(self.annulus_piece(g, m), 3, extent).sample(r)
        cut = far_cutoff(m, r)
        return (1.0 - cut) * v, cut * v

    def taylor_remainder_table(self, g: RadialProfile, lam: int, m_max: int) -> pd.DataFrame:
        """
        泰勒餘項表：A_l 上 sup|v_m − c_{0,m}⟨r⟩^{-1}| 對照 2^{(m−l)(λ+1)} 衰減
        """
        moments = self.annulus_moments(g, m_max + 4)
        rows = []
        for m in range(m_max + 1):
            first_far = m + 3
            reference = None
            for l in range(first_far, m_max + 5):
                r = np.geomspace(2.0 ** l, 2.0 ** (l + 1), 16)
                low, high = self.split_low_high(g, m, r)
                remainder = float(np.max(np.abs(low + high - moments[m] / japanese_bracket(r))))
                if reference is None:
                    reference = max(remainder, 1e-15 * max(abs(moments[m]), 1e-300))
                bound = reference * 2.0 ** ((first_far - l) * (lam + 1))
                floor = 1e-13 * max(abs(moments[m]), 1e-300)
                rows.append({"m": m, "l": l, "remainder": remainder, "bound": bound,
                             "within": remainder <= 4.0 * bound + floor})
        return pd.DataFrame(rows, columns=["m", "l", "remainder", "bound", "within"])

    # 擾動情形
    def _flat_operator(self, grid: Grid1D, ell: int) -> RadialOperator:
        zero = prof.zero()
        return RadialOperator(ell=ell, a2=zero, a1=zero, w=zero, c=zero, b1=zero, kappa=1, name="flat")

    def static_operators(self, rop: RadialOperator, grid: Grid1D):
        """(full, flat) radiation-boundary matrices at τ = 0 on ψ = rφ."""
        full = self.operator_service.assemble_discrete(rop, grid, 0.0, "radiation").matrix(0.0)
        flat = self.operator_service.assemble_discrete(self._flat_operator(grid, rop.ell), grid, 0.0,
                                                       "radiation").matrix(0.0)
        return sparse.csr_matrix(full.real), sparse.csr_matrix(flat.real)

    def direct_static_solve(self, rop: RadialOperator, g: RadialProfile, grid: Grid1D) -> np.ndarray:
        """τ = 0 banded solve of P_0 v = g; returns v on r_1..r_N."""
        full, _ = self.static_operators(rop, grid)
        radii = grid.nodes[1:]
        rhs = radii * g.sample(radii)
        rhs[-1] = 0.0
        try:
            psi = splu(sparse.csc_matrix(full)).solve(rhs)
        except RuntimeError as e:
            logger.error(f"Static operator singular: {e}")
            raise NumericalFailure(f"singular static operator: {e}") from e
        return psi / radii

    def zero_resolvent_expand(self, oc: OperatorCoeffs, g: RadialProfile, lam: int, grid: Grid1D,
                              bootstrap_radius: float = 4.0, tolerance: float = 1e-12,
                              max_sweeps: int = 400) -> ExpansionR0:
        """
        擾動零頻預解式的自舉展開

        Iterates w ← (1−θ)w + θ(Δ + P²_{<R/2})^{-1}(g − χ_{>R/2}P²w) from the free solution
        and re-expands the effective source −g + P²w with multipole_expansion after
        every sweep. R doubles whenever the residual ratio exceeds 0.9. For λ = κ+1
        the radial term χ_{>R/2}P²(c_0⟨r⟩^{-1}) is inverted on its own with
        radial_poisson_inverse and split as c'⟨r⟩^{-1} + e'(r)⟨r⟩^{-κ-1}.

        Raises:
            ValidationFailure: λ 超出 [1, κ+1]
            NumericalFailure: R 加倍兩次後仍不收縮
        """
        if not 1 <= lam <= oc.kappa + 1:
            raise ValidationFailure(f"lambda must lie in [1, kappa+1] = [1, {oc.kappa + 1}], got {lam}")
        rop = self.operator_service.radial_reduce(oc, 0)
        full, flat = self.static_operators(rop, grid)
        perturbation = sparse.csr_matrix(full - flat)
        radii = grid.nodes[1:]
        g_samples = g.sample(radii)
        source = radii * g_samples
        source[-1] = 0.0
        flat_solver = splu(sparse.csc_matrix(flat))

        def inverse(density: np.ndarray) -> np.ndarray:
            rhs = -np.atleast_2d(density) * radii
            rhs[:, -1] = 0.0
            return flat_solver.solve(np.ascontiguousarray(rhs.T)).T / radii

        def effective(psi: np.ndarray) -> np.ndarray:
            # −Δw = −g + P²w as a density in r
            density = -g_samples + (perturbation @ psi) / radii
            density[-1] = density[-2]
            return density

        R = bootstrap_radius
        history: List[float] = []
        coefficients: List[float] = []
        psi = flat_solver.solve(source)
        sweeps = 0
        doublings = 0
        while True:
            cut = np.asarray(chi_above(radii, R / 2.0)) if R > 0 else np.ones_like(radii)
            far = sparse.diags(cut) @ perturbation
            near_solver = splu(sparse.csc_matrix(flat + (perturbation - far)))
            residual_prev = None
            contracting = True
            for _ in range(max_sweeps):
                update = near_solver.solve(source - far @ psi)
                step = float(np.max(np.abs(update - psi)))
                psi = (1.0 - DAMPING) * psi + DAMPING * update
                sweeps += 1
                history.append(step)
                sweep_expansion = self.multipole_expansion(effective(psi), lam, r=radii, inverse=inverse)
                coefficients.append(sweep_expansion.c[0] if sweep_expansion.c else float(sweep_expansion.d[-1]))
                scale = max(float(np.max(np.abs(psi))), 1e-300)
                if step <= tolerance * scale:
                    break
                if residual_prev is not None and sweeps > 3 and step > CONTRACTION_LIMIT * residual_prev:
                    contracting = False
                    break
                residual_prev = step
            if contracting:
                break
            doublings += 1
            if doublings > MAX_DOUBLINGS:
                logger.error(f"Bootstrap failed to contract after doubling R to {R}")
                raise NumericalFailure(f"zero-resolvent bootstrap not contracting at R={R}")
            R *= 2.0
            logger.warning(f"Bootstrap contraction ratio above {CONTRACTION_LIMIT}; doubling R to {R}")

        expansion = self.multipole_expansion(effective(psi), lam, r=radii, inverse=inverse)
        expansion.direct = psi / radii
        expansion.class_of_e0 = "S(1)" if lam == oc.kappa + 1 else "l1S(1)"
        expansion.cutoff_radius = R
        expansion.sweeps = sweeps
        expansion.contraction = history
        expansion.coefficient_history = coefficients
        if lam == oc.kappa + 1:
            self._radial_term(expansion, perturbation, R, oc.kappa)
        logger.info(f"Zero-resolvent bootstrap converged in {sweeps} sweeps at R={R} (lambda={lam}), "
                    f"reconstruction error {expansion.reconstruction_error(2.0):.2e}")
        return expansion

    @staticmethod
    def _radial_term(expansion: ExpansionR0, perturbation: sparse.csr_matrix, R: float, kappa: int) -> None:
        """χ_{>R/2}P²(c_0⟨r⟩^{-1}) through radial_poisson_inverse, stored as c' and e'(r)."""
        radii = expansion.r
        br = japanese_bracket(radii)
        cut = np.asarray(chi_above(radii, R / 2.0))
        density = cut * (perturbation @ (expansion.c[0] * radii / br)) / radii
        density[-1] = 0.0
        source = RadialProfile(lambda s: np.interp(np.abs(s), radii, density, right=0.0), max_order=2,
                               support_hint=(R / 4.0, float(radii[-1])), name="radial_c0_source")
        v = radial_poisson_inverse(source, kappa + 3).sample(radii)
        monopole = float(v[-1] * radii[-1])
        expansion.radial_monopole = monopole
        expansion.radial_remainder = (v - monopole / br) * br ** (kappa + 1)

    @staticmethod
    def _sampled_moments(r: np.ndarray, density: np.ndarray) -> np.ndarray:
        m_max = _annulus_count(float(r[-1]))
        out = np.zeros(m_max + 1)
        full_r = np.concatenate([[0.0], r])
        full_density = np.concatenate([[density[0]], density])
        for m in range(m_max + 1):
            weight = beta(m, full_r)
            out[m] = float(simpson(weight * full_density * full_r ** 2, x=full_r))
        return out
