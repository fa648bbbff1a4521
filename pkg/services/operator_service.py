"""
算子服務模組 - 自伴波算子 P 的係數、球諧徑向約化與離散組裝

P = −∂ₜ² + Δ + ∂ₜP¹ + P² is obtained by conjugating □_g + V with
A = (−g^{tt})^{-1/2}|g|^{-1/4}. For radial metrics the spatial part separates
per harmonic into L_ℓ acting on φ(r), and the solvers work with ψ = rφ.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sparse
from scipy.special import spherical_jn, spherical_yn

from services.metric_service import MetricSpec
from utils.common.errors import NumericalFailure, ValidationFailure
from utils.common.logging_utils import get_logger
from utils.numerics.grid import Grid1D
from utils.numerics.stencils import (CENTRAL_OFFSETS, first_derivative_weights, integer_stencil,
                                     second_derivative_weights)
from utils.radial import profiles as prof
from utils.radial.profiles import RadialProfile, SymbolClass

# 配置日誌
logger = get_logger("operator_service")

CARTESIAN_STEP = 0.02
# |τ|R 低於此值時外邊界改用精確的平直外行對數導數
SOMMERFELD_THRESHOLD = 8.0
COEFFICIENT_COLUMNS = ("r", "a2", "a1", "w", "c", "b1")

Cartesian = Callable[[np.ndarray], np.ndarray]


def _radius(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def _unit(x: np.ndarray) -> np.ndarray:
    r = _radius(x)
    if np.any(r == 0):
        raise ValidationFailure("Cartesian operator oracles are undefined at the origin")
    return x / r[..., None]


def _cartesian_gradient(fn: Cartesian, x: np.ndarray, h: float = CARTESIAN_STEP) -> np.ndarray:
    """Nine-point central gradient of a scalar or array-valued Cartesian function."""
    weights = integer_stencil(CENTRAL_OFFSETS, 1)
    centre = fn(x)
    out = []
    for axis in range(3):
        total = np.zeros_like(centre)
        for k, w in zip(CENTRAL_OFFSETS, weights):
            if k != 0 and w != 0.0:
                shifted = x.copy()
                shifted[..., axis] += k * h
                total = total + w * (fn(shifted) - centre)
        out.append(total / h)
    return np.stack(out, axis=-1)


class OperatorCoeffs:
    """
    P 的係數集合（徑向度規）

    Attributes:
        a: −g^{tt} = 1 − f^{tt} − h^{tt}
        beta: g^{tr}
        c_r: g^{rr}
        b: 1 + f^{ωω} + h^{ωω}
        A: 共軛因子 (−g^{tt})^{-1/2}|g|^{-1/4}
        W: |g|^{1/2}
        p1_r: P¹ 的徑向分量 β/a
        p2_rad, p2_tan: p₂^{ij} 的徑向與切向部分
        p2_omega: (h^{tt} + h^{ωω}) r^{-2}
        V_r, V_l: 位勢
    """

    def __init__(self, metric: MetricSpec):
        self.metric = metric
        self.kappa = metric.kappa
        self.a = (1.0 - metric.f("tt") - metric.h_tt).renamed("a")
        self.beta = (metric.f("tr") + metric.h_tr).renamed("beta")
        self.c_r = (1.0 + metric.f("rr") + metric.h_rr).renamed("c_r")
        self.b = (1.0 + metric.f("ww") + metric.h_ww).renamed("b")

        a, beta, c_r, b = self.a, self.beta, self.c_r, self.b
        scale, fine = metric.variation_scale()
        self.steps = {"length_scale": scale, "fine_extent": fine}
        steps = self.steps

        def det_term(r):
            return a(r) * c_r(r) + beta(r) ** 2

        def W(r):
            return 1.0 / (np.sqrt(det_term(r)) * b(r))

        def A(r):
            return 1.0 / np.sqrt(a(r) * W(r))

        self.W = RadialProfile(W, max_order=4, name="W", **steps)
        self.A = RadialProfile(A, max_order=4, name="A", **steps)
        self.B_rad = RadialProfile(lambda r: W(r) * c_r(r), max_order=4, name="B_rad", **steps)
        self.B_tan = RadialProfile(lambda r: W(r) * b(r), max_order=4, name="B_tan", **steps)
        self.p1_r = RadialProfile(lambda r: beta(r) / a(r), max_order=4,
                                  claimed=SymbolClass("S_rad", -self.kappa), name="p1_r", **steps)
        H = metric.h_tt + metric.h_ww
        self.p2_rad = RadialProfile(lambda r: c_r(r) / a(r) - 1.0, max_order=4,
                                    claimed=SymbolClass("S_rad", -self.kappa), name="p2_rad", **steps)
        self.p2_tan = RadialProfile(lambda r: b(r) / a(r) - 1.0 - H(r), max_order=4,
                                    claimed=SymbolClass("S_rad", -self.kappa), name="p2_tan", **steps)

        def p2_omega(r):
            r = np.asarray(r, dtype=float)
            safe = np.where(r > 0, r, 1.0)
            return np.where(r > 0, H(safe) / safe ** 2, 0.0)

        self.p2_omega = RadialProfile(p2_omega, max_order=4, claimed=SymbolClass("S_rad", -self.kappa - 2),
                                      name="p2_omega", **steps)
        self.V_l = prof.zero("V_l") if metric.V_l is None else (metric.V_l / a).renamed("V_l")
        self.V_r = RadialProfile(self._scalar_potential, max_order=4,
                                 claimed=SymbolClass("S_rad", -self.kappa - 2), name="V_r", **steps)
        self._check_denominators()

    def _check_denominators(self):
        r = np.linspace(0.0, 64.0, 2049)
        if np.any(np.abs(self.a.sample(r)) < 1e-12):
            raise NumericalFailure("1 - f^tt - h^tt vanishes on the grid")
        det = self.a.sample(r) * self.c_r.sample(r) + self.beta.sample(r) ** 2
        if np.any(det <= 0) or np.any(self.b.sample(r) <= 0):
            raise NumericalFailure("|g| <= 0 on the grid")

    def _scalar_potential(self, r):
        """A[B_rad A'' + (B_rad' + 2B_rad/r)A'] + V/a; radial parts of the conjugation scalar terms."""
        r = np.asarray(r, dtype=float)
        safe = np.where(np.abs(r) > 1e-6, np.abs(r), 1e-6)
        A = self.A.eval(safe)
        A1 = self.A.deriv(1, safe)
        A2 = self.A.deriv(2, safe)
        B = self.B_rad.eval(safe)
        B1 = self.B_rad.deriv(1, safe)
        V = self.metric.V_r.eval(safe) / self.a.eval(safe)
        return A * (B * A2 + (B1 + 2.0 * B / safe) * A1) + V

    # 笛卡兒形式
    def p1_vector(self, x: np.ndarray) -> np.ndarray:
        return self.p1_r.eval(_radius(x))[..., None] * _unit(x)

    def p2_matrix(self, x: np.ndarray) -> np.ndarray:
        r = _radius(x)
        n = _unit(x)
        proj = n[..., :, None] * n[..., None, :]
        eye = np.eye(3)
        return (self.p2_rad.eval(r)[..., None, None] * proj
                + self.p2_tan.eval(r)[..., None, None] * (eye - proj))

    def spatial_dual(self, x: np.ndarray) -> np.ndarray:
        """Cartesian g^{ij} = c_r x̂x̂ + b(δ − x̂x̂)."""
        r = _radius(x)
        n = _unit(x)
        proj = n[..., :, None] * n[..., None, :]
        return (self.c_r.eval(r)[..., None, None] * proj
                + self.b.eval(r)[..., None, None] * (np.eye(3) - proj))

    def conjugated_action(self, f: Cartesian, x: np.ndarray) -> np.ndarray:
        """
        a^{-1}A^{-1}(□_g + V)(A f) on a stationary Cartesian function, by nested finite differences
        """
        A = lambda y: self.A.eval(_radius(y))

        def flux(y):
            grad = _cartesian_gradient(lambda z: A(z) * f(z), y)
            W = self.W.eval(_radius(y))
            return W[..., None] * np.einsum("...ij,...j->...i", self.spatial_dual(y), grad)

        div = np.zeros(len(x))
        jac = _cartesian_gradient(flux, x)
        for i in range(3):
            div = div + jac[..., i, i]
        r = _radius(x)
        a = self.a.eval(r)
        W = self.W.eval(r)
        V = self.metric.V_r.eval(r)
        return div / (a * A(x) * W) + V * f(x) / a

    def divergence_action(self, f: Cartesian, x: np.ndarray) -> np.ndarray:
        """
        ∂_i A²B^{ij}∂_j f + [A(∂_iB^{ij})(∂_jA) + AB^{ij}∂_{ij}A + V/a] f with every derivative by Cartesian differences
        """
        A = lambda y: self.A.eval(_radius(y))

        def B(y):
            return self.W.eval(_radius(y))[..., None, None] * self.spatial_dual(y)

        def flux(y):
            grad = _cartesian_gradient(f, y)
            return (A(y) ** 2)[..., None] * np.einsum("...ij,...j->...i", B(y), grad)

        jac = _cartesian_gradient(flux, x)
        principal = jac[..., 0, 0] + jac[..., 1, 1] + jac[..., 2, 2]
        dB = _cartesian_gradient(B, x)  # [..., i, j, k] = ∂_k B^{ij}
        divB = np.einsum("...iji->...j", dB)
        gradA = _cartesian_gradient(A, x)
        hessA = _cartesian_gradient(lambda y: _cartesian_gradient(A, y), x)
        Ax = A(x)
        scalar = Ax * np.einsum("...j,...j->...", divB, gradA) + Ax * np.einsum("...ij,...ij->...", B(x), hessA)
        r = _radius(x)
        scalar = scalar + self.metric.V_r.eval(r) / self.a.eval(r)
        return principal + scalar * f(x)

    def coefficient_profiles(self) -> Dict[str, RadialProfile]:
        return {"p1_r": self.p1_r, "p2_rad": self.p2_rad, "p2_tan": self.p2_tan,
                "p2_omega": self.p2_omega, "V_r": self.V_r, "V_l": self.V_l}


@dataclass
class RadialOperator:
    """
    第 ℓ 個球諧的一維算子
    L_ℓφ = (1+a2)φ'' + (2/r + a1)φ' − (1+w)ℓ(ℓ+1)/r²·φ + cφ，加上 ∂ₜ 耦合 b1
    """

    ell: int
    a2: RadialProfile
    a1: RadialProfile
    w: RadialProfile
    c: RadialProfile
    b1: RadialProfile
    kappa: int
    name: str = "radial"
    _cache: Dict[tuple, Dict[str, np.ndarray]] = field(default_factory=dict, repr=False)

    @property
    def has_coupling(self) -> bool:
        return bool(np.any(self.sample(np.linspace(0.5, 64.0, 128))["b1"] != 0.0))

    def sample(self, r: np.ndarray) -> Dict[str, np.ndarray]:
        """Coefficient arrays on r (cached by grid)."""
        r = np.asarray(r, dtype=float)
        key = (r.size, float(r[0]), float(r[-1]))
        if key not in self._cache:
            self._cache[key] = {
                "a2": self.a2.sample(r),
                "a2_prime": self.a2.sample(r, 1),
                "a1": self.a1.sample(r),
                "w": self.w.sample(r),
                "c": self.c.sample(r),
                "b1": self.b1.sample(r),
            }
        return self._cache[key]

    def apply(self, phi: RadialProfile, r: np.ndarray) -> np.ndarray:
        """L_ℓφ at r > 0 from profile derivatives."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValidationFailure("radial operator is applied at r > 0 only")
        L = self.ell * (self.ell + 1)
        return ((1.0 + self.a2.sample(r)) * phi.sample(r, 2)
                + (2.0 / r + self.a1.sample(r)) * phi.sample(r, 1)
                - (1.0 + self.w.sample(r)) * L / r ** 2 * phi.sample(r)
                + self.c.sample(r) * phi.sample(r))

    def coefficient_frame(self, r: np.ndarray) -> pd.DataFrame:
        values = self.sample(r)
        return pd.DataFrame({"r": r, "a2": values["a2"], "a1": values["a1"], "w": values["w"],
                             "c": values["c"], "b1": values["b1"]})


def outgoing_robin(ell: int, tau: complex, radius: float) -> complex:
    """
    外邊界 Robin 係數 β，使 ψ' + βψ = 0

    τ = 0 gives the decaying static branch ψ ~ r^{−ℓ}. For |τ|R ≥ 8 it is the
    one-term-corrected Sommerfeld coefficient iτ + ℓ(ℓ+1)/(2iτR²); below that the
    expansion is useless and β = −ψ'/ψ is taken from the flat outgoing solution
    ψ = r·h_ℓ(τr) with h_ℓ = j_ℓ − i·y_ℓ ~ e^{−iτr}.
    """
    if tau == 0:
        return complex(ell / radius)
    tau = complex(tau)
    if abs(tau) * radius >= SOMMERFELD_THRESHOLD:
        return 1j * tau + ell * (ell + 1) / (2j * tau * radius ** 2)
    z = tau * radius
    h = spherical_jn(ell, z) - 1j * spherical_yn(ell, z)
    dh = spherical_jn(ell, z, derivative=True) - 1j * spherical_yn(ell, z, derivative=True)
    return complex(-1.0 / radius - tau * dh / h)


@dataclass
class DiscreteOperator:
    """
    P_τ,ℓ 在 ψ = rφ 上的帶狀離散

    Attributes:
        stiffness: L_ℓ（含位勢）；Dirichlet 時為實對稱
        coupling: 反對稱的 b1∂_r + ∂_r b1
        boundary: "dirichlet" 或 "radiation"
        radii: 未知量所在的節點 r_1..r_n
    """

    grid: Grid1D
    ell: int
    tau: Optional[complex]
    stiffness: sparse.csr_matrix
    coupling: sparse.csr_matrix
    boundary: str
    radii: np.ndarray

    @property
    def size(self) -> int:
        return self.stiffness.shape[0]

    @property
    def interior_rows(self) -> int:
        return self.size if self.boundary == "dirichlet" else self.size - 1

    def boundary_row(self, tau: complex) -> sparse.csr_matrix:
        """One-sided derivative plus Robin term on the last unknown."""
        n = self.size
        weights = integer_stencil((-4, -3, -2, -1, 0), 1) / self.grid.h
        cols = np.arange(n - 5, n)
        values = weights.astype(complex)
        values[-1] += outgoing_robin(self.ell, tau, float(self.radii[-1]))
        return sparse.csr_matrix((values, (np.full(5, n - 1), cols)), shape=(n, n))

    def matrix(self, tau: Optional[complex] = None) -> sparse.csc_matrix:
        """τ² + L_ℓ + iτ·coupling on interior rows, the outgoing condition on the last row when radiating."""
        tau = self.tau if tau is None else tau
        tau = 0.0 if tau is None else complex(tau)
        diag = np.full(self.size, tau * tau, dtype=complex)
        diag[self.interior_rows:] = 0.0
        total = self.stiffness.astype(complex) + sparse.diags(diag) + 1j * tau * self.coupling
        if self.boundary == "radiation":
            total = total + self.boundary_row(tau)
        return sparse.csc_matrix(total)

    def apply(self, psi: np.ndarray, tau: Optional[complex] = None) -> np.ndarray:
        return self.matrix(tau) @ psi


class OperatorService:
    """算子服務：建立 OperatorCoeffs、徑向約化與離散組裝"""

    def __init__(self, flat_tolerance: float = 1e-12):
        self.flat_tolerance = flat_tolerance
        logger.info("Operator service initialized")

    def build_operator(self, nm: MetricSpec) -> OperatorCoeffs:
        """
        由正規化度規建立 P 的係數

        Raises:
            ValidationFailure: 輸入未滿足正規化條件
            NumericalFailure: 分母消失或 |g| ≤ 0
        """
        r = np.linspace(0.0, 256.0, 1025)
        residual = max(float(np.max(np.abs(nm.h_tr.sample(r)))),
                       float(np.max(np.abs(nm.h_rr.sample(r) + nm.h_tt.sample(r)))))
        if residual > 1e-10:
            raise ValidationFailure(f"metric is not normalized (residual {residual:.2e}); run normalize first")
        coeffs = OperatorCoeffs(nm)
        logger.info(f"Built operator coefficients for metric '{nm.name}' (kappa={nm.kappa})")
        return coeffs

    def radial_reduce(self, oc: OperatorCoeffs, ell: int) -> RadialOperator:
        """
        第 ℓ 個球諧的徑向約化

        Args:
            oc: 徑向度規的算子係數
            ell: 球諧指標 ℓ ≥ 0

        Returns:
            RadialOperator: 一維算子
        """
        if ell < 0:
            raise ValidationFailure(f"harmonic index must be >= 0, got {ell}")
        a, c_r, b = oc.a, oc.c_r, oc.b
        a2 = RadialProfile(lambda r: c_r(r) / a(r) - 1.0, max_order=4,
                           claimed=SymbolClass("S_rad", -oc.kappa), name="a2", **oc.steps)

        def a1(r):
            r = np.asarray(r, dtype=float)
            safe = np.where(np.abs(r) > 1e-6, np.abs(r), 1e-6)
            return a2.deriv(1, safe) + 2.0 * a2.eval(safe) / safe

        w = RadialProfile(lambda r: b(r) / a(r) - 1.0, max_order=4,
                          claimed=SymbolClass("S_rad", -oc.kappa), name="w", **oc.steps)
        c = (oc.V_r + oc.V_l).renamed("c").with_claim(SymbolClass("S_rad", -oc.kappa - 2))
        rop = RadialOperator(
            ell=ell,
            a2=a2,
            a1=RadialProfile(a1, max_order=3, claimed=SymbolClass("S_rad", -oc.kappa - 1), name="a1",
                           **oc.steps),
            w=w,
            c=c,
            b1=oc.p1_r.renamed("b1"),
            kappa=oc.kappa,
            name=f"{oc.metric.name}:l{ell}",
        )
        logger.info(f"Reduced operator to harmonic l={ell}")
        return rop


    def assemble_discrete(self, rop: RadialOperator, grid: Grid1D, tau: Optional[complex] = None,
                          boundary: str = "dirichlet") -> DiscreteOperator:
        """
        組裝 τ² + L_ℓ + iτ(b1 項) 在 ψ = rφ 上的帶狀矩陣

        Dirichlet unknowns are ψ_1..ψ_{N−1} with an odd ghost beyond r_N. Radiation
        unknowns are ψ_1..ψ_N; row N−1 drops to the second-order stencil and row N
        carries the outgoing condition. The origin uses the parity ghost ψ_{−1} = (−1)^{ℓ+1}ψ_1.

        Args:
            rop: 徑向算子
            grid: 均勻網格
            tau: 頻率（None 表示僅組裝空間部分）
            boundary: "dirichlet" 或 "radiation"

        Returns:
            DiscreteOperator: 離散算子

        Raises:
            ValidationFailure: Im τ > 0、網格過粗或未知邊界
        """
        if tau is not None and np.imag(tau) > 0:
            raise ValidationFailure(f"Im tau must be <= 0, got tau={tau}")
        if boundary not in ("dirichlet", "radiation"):
            raise ValidationFailure(f"unknown boundary treatment '{boundary}'")
        if grid.n_intervals < 16:
            raise ValidationFailure(f"grid with {grid.n_intervals} intervals is too coarse for order {grid.order}")
        h = grid.h
        N = grid.n_intervals
        n = N - 1 if boundary == "dirichlet" else N
        n_rows = n if boundary == "dirichlet" else n - 1
        radii = grid.nodes[1:n + 1]
        coeffs = rop.sample(radii)
        parity = (-1) ** (rop.ell + 1)
        rows_all = np.arange(n_rows)
        low_order_row = n - 2 if (boundary == "radiation" and grid.order == 4) else None

        rows, cols, vals = [], [], []

        def add(r_idx, node, weight):
            # node j ↦ unknown j−1; ψ_0 = 0, ghosts folded back
            valid = (node >= 1) & (node <= n)
            rows.append(r_idx[valid]); cols.append(node[valid] - 1); vals.append(np.broadcast_to(weight, node.shape)[valid])
            ghost_in = node == -1
            if np.any(ghost_in):
                rows.append(r_idx[ghost_in]); cols.append(np.zeros(ghost_in.sum(), dtype=int))
                vals.append(parity * np.broadcast_to(weight, node.shape)[ghost_in])
            if boundary == "dirichlet":
                ghost_out = node == N + 1
                if np.any(ghost_out):
                    rows.append(r_idx[ghost_out]); cols.append(np.full(ghost_out.sum(), N - 2))
                    vals.append(-np.broadcast_to(weight, node.shape)[ghost_out])

        # 常係數 ∂_r²
        stencil = second_derivative_weights(grid.order) / h ** 2
        half = len(stencil) // 2
        main_rows = rows_all if low_order_row is None else rows_all[rows_all != low_order_row]
        for k, w in enumerate(stencil):
            add(main_rows, main_rows + 1 + (k - half), w)
        if low_order_row is not None:
            r_idx = np.array([low_order_row])
            for k, w in enumerate(second_derivative_weights(2) / h ** 2):
                add(r_idx, r_idx + k, w)

        second = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

        # ∂_r a2 ∂_r = ½(∂_r² a2 + a2 ∂_r²) − ½a2''，保持對稱與四階精度
        L = rop.ell * (rop.ell + 1)
        potential = -coeffs["a2_prime"] / radii - (1.0 + coeffs["w"]) * L / radii ** 2 + coeffs["c"]
        K = second
        if np.any(coeffs["a2"] != 0.0):
            A2 = sparse.diags(coeffs["a2"])
            K = K + 0.5 * (second @ A2 + A2 @ second)
            potential = potential - 0.5 * rop.a2.sample(radii, 2)
        potential[n_rows:] = 0.0
        K = sparse.csr_matrix(K + sparse.diags(potential))

        if np.any(coeffs["b1"] != 0.0):
            C = self._coupling(coeffs["b1"], grid, n, n_rows, low_order_row)
        else:
            C = sparse.csr_matrix((n, n))

        discrete = DiscreteOperator(grid=grid, ell=rop.ell, tau=tau, stiffness=K, coupling=C,
                                    boundary=boundary, radii=radii)
        logger.debug(f"Assembled {boundary} operator: n={n}, order={grid.order}, l={rop.ell}")
        return discrete

    @staticmethod
    def _coupling(p: np.ndarray, grid: Grid1D, n: int, n_rows: int, low_order_row: Optional[int]) -> sparse.csr_matrix:
        """M_ij = (p_i + p_j)·D_ij with D the truncated antisymmetric first derivative."""
        weights = first_derivative_weights(grid.order) / grid.h
        half = len(weights) // 2
        rows, cols, vals = [], [], []
        for k, w in enumerate(weights):
            if w == 0.0:
                continue
            i = np.arange(n_rows)
            if low_order_row is not None:
                i = i[i != low_order_row]
            j = i + (k - half)
            keep = (j >= 0) & (j < n)
            rows.append(i[keep]); cols.append(j[keep]); vals.append(np.full(keep.sum(), w))
        if low_order_row is not None:
            rows.append(np.array([low_order_row, low_order_row]))
            cols.append(np.array([low_order_row - 1, low_order_row + 1]))
            vals.append(np.array([-0.5, 0.5]) / grid.h)
        D = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        P = sparse.diags(p)
        return sparse.csr_matrix(P @ D + D @ P)

    def dump_coefficients(self, rop: RadialOperator, grid: Grid1D) -> pd.DataFrame:
        """Coefficient table (r, a2, a1, w, c, b1) on the grid nodes r_1..r_N."""
        frame = rop.coefficient_frame(grid.nodes[1:])
        return frame.loc[:, list(COEFFICIENT_COLUMNS)]
