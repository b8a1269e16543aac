"""Discretized drift operators on the spectral reference basis.

Every operator is represented by its action on coefficient vectors (the
function A(t) u expressed in the reference Fourier basis) together with a
weak-form pairing assembled by trapezoid quadrature. The pairings follow
the Gelfand triple of their scenario:

  * the shrinking-sphere operator pairs in the unweighted reference L2
    space, where the diagonal is (n^2 - lam_k) / (1 - 2 n t);
  * the moving-surface operator pairs in the weighted space carrying the
    volume factor sqrt|g(., t)|;
  * the general parabolic operator is a conjugation by the isotropic
    transport map, whose measure-compensated inverse makes the composition
    the identity on the reference L2 space, so the pairing lives there;
  * the p-Laplace pairing is the nonlinear gradient form on the mean-zero
    subspace.

Pointwise (Nemytskii) nonlinearities from a monotone Lipschitz catalog can
be subtracted from any linear drift.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .basis import FourierBasis
from .geometry import (
    CIRCLE,
    MetricFamily,
    PullbackMap,
    ReferenceManifold,
    gradient_form_bounds,
    norm_equivalence_constants,
)


@dataclass
class GalerkinOperator:
    """Snapshot of a drift operator at one time.

    action maps a coefficient vector to the coefficients of A(t) u;
    pairing(u, v) evaluates the weak form <A(t) u, v> in the scenario's
    duality. When the operator is diagonal in the Fourier basis the
    diagonal is stored and action applies it entrywise.
    """

    t: float
    mode_count: int
    action: Callable[[np.ndarray], np.ndarray]
    pairing: Callable[[np.ndarray, np.ndarray], float]
    diagonal: Optional[np.ndarray] = None
    linear: bool = True
    pairing_matrix: Optional[np.ndarray] = None

    def dense_pairing_matrix(self, dim: int) -> np.ndarray:
        """Assemble pairing(e_m, e_l) for all basis pairs (tests, export)."""
        eye = np.eye(dim)
        mat = np.empty((dim, dim))
        for m in range(dim):
            for l in range(dim):
                mat[m, l] = self.pairing(eye[m], eye[l])
        return mat

    def dense_action_matrix(self, dim: int) -> np.ndarray:
        eye = np.eye(dim)
        return np.column_stack([self.action(eye[m]) for m in range(dim)])


def pairing_matrix_csv(matrix: np.ndarray, path):
    """Write a dense pairing matrix as CSV with columns (row, col, value)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("row,col,value\n")
        for r in range(matrix.shape[0]):
            for c in range(matrix.shape[1]):
                fh.write(f"{r},{c},{float(matrix[r, c])!r}\n")


def _bilinear_pairing_matrix(basis, grad_weight=None, conv_weight=None, mass_weight=None):
    """Quadrature matrix P with u^T P v = -int(gw du dv) - int(cw du v) - int(mw u v)."""
    w = basis.weights
    B, D = basis.values, basis.derivs
    P = np.zeros((basis.dim, basis.dim))
    if grad_weight is not None:
        P -= D.T @ (D * (w * grad_weight)[:, None])
    if conv_weight is not None:
        P -= D.T @ (B * (w * conv_weight)[:, None])
    if mass_weight is not None:
        P -= B.T @ (B * (w * mass_weight)[:, None])
    return P


# ---------------------------------------------------------------------------
# Linear assemblies
# ---------------------------------------------------------------------------


def assemble_mcf_sphere(n: int, t: float, mode_count: int) -> GalerkinOperator:
    """Drift of the pulled-back heat equation on the shrinking sphere.

    Diagonal in the Fourier basis with entries

        d_k(t) = (n^2 - lam_k) / (1 - 2 n t),

    where lam_k are the reference Laplace eigenvalues (0, 1, 1, 4, 4, ...)
    and n is the ambient dimension. The pairing is the reference L2
    product against the diagonal action.
    """
    if n < 2:
        raise ValueError("ambient dimension n must be >= 2")
    shrink = 1.0 - 2.0 * n * t
    if t < 0.0 or shrink <= 0.0:
        raise ValueError(f"t = {t} at or past the collapse time 1/(2n) = {1.0 / (2 * n)}")
    freqs = np.zeros(2 * mode_count + 1)
    freqs[1::2] = np.arange(1, mode_count + 1)
    freqs[2::2] = np.arange(1, mode_count + 1)
    diag = (float(n) ** 2 - freqs**2) / shrink
    return GalerkinOperator(
        t=t,
        mode_count=mode_count,
        action=lambda u, d=diag: d * u,
        pairing=lambda u, v, d=diag: float((d * u) @ v),
        diagonal=diag,
        linear=True,
    )


def sphere_vh(n: int) -> Callable[[np.ndarray, float], np.ndarray]:
    """Velocity-times-curvature profile of the shrinking sphere, -n^2/(1-2nt)."""

    def vh(theta, t):
        return np.full_like(theta, -float(n) ** 2 / (1.0 - 2.0 * n * t))

    return vh


def assemble_moving_surface(mf: MetricFamily, vh, t: float, k1: float) -> GalerkinOperator:
    """Drift of the pulled-back heat equation on a general moving surface.

    The weak form, assembled by quadrature on the reference grid, is

        <A u, v> = -int g^{11} sqrt|g_t| du dv d theta
                   -int sqrt|g_t| VH u v d theta,

    the duality of the weighted space with volume factor sqrt|g_t|. The
    action is the drift function g^{11} u'' - VH u in basis coefficients.
    """
    if t < 0.0 or t > mf.horizon + 1e-12:
        raise ValueError(f"t = {t} outside the family horizon [0, {mf.horizon}]")
    basis = mf.base.basis
    g11 = mf.g11(t)
    sd = mf.sqrt_det(t)
    vh_grid = np.asarray(vh(basis.theta, t), dtype=float)
    if np.max(np.abs(vh_grid)) > k1 * (1.0 + 1e-12):
        raise ValueError(f"|VH| exceeds the declared bound k1 = {k1} at t = {t}")

    P = _bilinear_pairing_matrix(
        basis,
        grad_weight=np.full(basis.grid_size, g11 * sd),
        mass_weight=sd * vh_grid,
    )
    lam = basis.eigenvalues
    vh_is_const = np.ptp(vh_grid) < 1e-14
    if vh_is_const:
        diag = -g11 * lam - vh_grid[0]
        action = lambda u, d=diag: d * u
    else:
        diag = None

        def action(u, basis=basis, g11=g11, vh_grid=vh_grid, lam=lam):
            lap = -lam * u
            reaction = basis.to_coeffs(vh_grid * basis.to_grid(u))
            return g11 * lap - reaction

    return GalerkinOperator(
        t=t,
        mode_count=basis.mode_count,
        action=action,
        pairing=lambda u, v, P=P: float(u @ P @ v),
        diagonal=diag,
        linear=True,
        pairing_matrix=P,
    )


@dataclass(frozen=True)
class ParabolicCoefficients:
    """Coefficients (a, b, c~) of the general parabolic drift.

    a is the diffusion coefficient with positive lower bound, b the
    advection coefficient, c~ the bounded reaction coefficient. On a
    closed manifold the divergence of any nonzero periodic advection field
    integrates to zero, so the required strictly negative divergence can
    only be met by the zero field; b != 0 is rejected accordingly.
    """

    manifold: ReferenceManifold
    a_grid: np.ndarray = field(repr=False)
    b_grid: np.ndarray = field(repr=False)
    ct_grid: np.ndarray = field(repr=False)
    a_lower: float = 0.0
    a_upper: float = 0.0
    b_inf: float = 0.0
    ct_inf: float = 0.0


def make_parabolic_coefficients(manifold: ReferenceManifold, a, b, ctilde) -> ParabolicCoefficients:
    """Evaluate and validate coefficient functions (or scalars) on the grid."""
    basis = manifold.basis

    def on_grid(c):
        if callable(c):
            return np.asarray(c(basis.theta), dtype=float)
        return np.full(basis.grid_size, float(c))

    a_grid, b_grid, ct_grid = on_grid(a), on_grid(b), on_grid(ctilde)
    a_lower = float(a_grid.min())
    if a_lower <= 0.0:
        raise ValueError("diffusion coefficient a must have a positive lower bound")
    if np.any(b_grid != 0.0):
        div_b = basis.to_grid(basis.deriv_coeffs(basis.to_coeffs(b_grid)))
        if np.any(div_b >= 0.0):
            raise ValueError(
                "advection coefficient must have strictly negative divergence "
                "at every grid node (impossible for nonzero periodic b)"
            )
    return ParabolicCoefficients(
        manifold=manifold,
        a_grid=a_grid,
        b_grid=b_grid,
        ct_grid=ct_grid,
        a_lower=a_lower,
        a_upper=float(a_grid.max()),
        b_inf=float(np.max(np.abs(b_grid))),
        ct_inf=float(np.max(np.abs(ct_grid))),
    )


def assemble_general_parabolic(coef: ParabolicCoefficients, pmap: PullbackMap, t: float) -> GalerkinOperator:
    """Conjugated parabolic drift on the reference manifold.

    The transport map is the identity in the chart and its
    measure-compensated inverse cancels the volume factor, so the pairing
    reduces to the reference L2 duality with the time-scaled inverse
    metric in the gradient term:

        <A u, v> = -int a g^{11}(t) du dv - int b du v - int c~ u v.

    At t = 0 this is the plain assembly of the drift.
    """
    if t < 0.0 or t > pmap.horizon + 1e-12:
        raise ValueError(f"t = {t} outside the map horizon [0, {pmap.horizon}]")
    mf = pmap.metric
    basis = mf.base.basis
    g11 = mf.g11(t)
    lam = basis.eigenvalues

    a_const = np.ptp(coef.a_grid) < 1e-14
    ct_const = np.ptp(coef.ct_grid) < 1e-14
    b_zero = not np.any(coef.b_grid)
    if a_const and ct_const and b_zero:
        diag = -coef.a_grid[0] * g11 * lam - coef.ct_grid[0]
        return GalerkinOperator(
            t=t,
            mode_count=basis.mode_count,
            action=lambda u, d=diag: d * u,
            pairing=lambda u, v, d=diag: float((d * u) @ v),
            diagonal=diag,
            linear=True,
        )

    P = _bilinear_pairing_matrix(
        basis,
        grad_weight=coef.a_grid * g11,
        conv_weight=coef.b_grid if not b_zero else None,
        mass_weight=coef.ct_grid,
    )
    A_mat = P.T  # orthonormal reference basis: action_l = pairing(u, e_l)
    return GalerkinOperator(
        t=t,
        mode_count=basis.mode_count,
        action=lambda u, M=A_mat: M @ u,
        pairing=lambda u, v, P=P: float(u @ P @ v),
        diagonal=None,
        linear=True,
        pairing_matrix=P,
    )


# ---------------------------------------------------------------------------
# p-Laplace weak form
# ---------------------------------------------------------------------------


def _require_mean_zero(coeffs: np.ndarray, name: str):
    scale = max(1.0, float(np.linalg.norm(coeffs)))
    if abs(coeffs[0]) > 1e-10 * scale:
        raise ValueError(f"{name} must be mean-zero (constant mode dropped)")


def p_laplace_pairing(u: np.ndarray, v: np.ndarray, p: float, mf: MetricFamily, t: float = 0.0) -> float:
    """Weak form of the p-Laplace drift, -int |grad u|^{p-2} <grad u, grad v>_g dnu(g).

    Requires p > 2 and mean-zero u, v; with v = u the value is the negative
    p-th power of the gradient seminorm, so the form is non-positive on the
    diagonal.
    """
    if p <= 2.0:
        raise ValueError("p must be > 2")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _require_mean_zero(u, "u")
    _require_mean_zero(v, "v")
    basis = mf.base.basis
    g11 = mf.g11(t)
    sd = mf.sqrt_det(t)
    du = basis.grid_deriv(u)
    dv = basis.grid_deriv(v)
    grad_sq = g11 * du * du
    integrand = np.power(grad_sq, 0.5 * (p - 2.0)) * g11 * du * dv * sd
    return -basis.quad(integrand)


def p_laplace_action(u: np.ndarray, p: float, mf: MetricFamily, t: float = 0.0) -> np.ndarray:
    """Riesz coefficients of the p-Laplace drift in the reference basis."""
    basis = mf.base.basis
    g11 = mf.g11(t)
    sd = mf.sqrt_det(t)
    du = basis.grid_deriv(u)
    grad_sq = g11 * du * du
    flux = np.power(grad_sq, 0.5 * (p - 2.0)) * g11 * du * sd
    return -basis.derivs.T @ (basis.weights * flux)


def w1p_norm(coeffs: np.ndarray, p: float, mf: MetricFamily, t: float = 0.0) -> float:
    """The W^{1,p} norm (int |u|^p + |grad u|^p dnu(g))^{1/p} by quadrature."""
    basis = mf.base.basis
    g11 = mf.g11(t)
    sd = mf.sqrt_det(t)
    ug = basis.to_grid(coeffs)
    du = basis.grid_deriv(coeffs)
    val = basis.quad((np.abs(ug) ** p + (g11 * du * du) ** (0.5 * p)) * sd)
    return float(val ** (1.0 / p))


# ---------------------------------------------------------------------------
# Pointwise nonlinearities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonlinearitySpec:
    """Monotone Lipschitz scalar function applied pointwise on the grid."""

    kind: str
    gamma: float
    c_lip: float
    monotone: bool
    phi: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def describe(self) -> str:
        return f"{self.kind}(gamma={self.gamma!r})"


def nonlinearity(kind: str, gamma: float = 1.0) -> NonlinearitySpec:
    """Catalog of admissible nonlinearities: zero, linear, tanh-type."""
    if kind == "zero":
        return NonlinearitySpec("zero", 0.0, 0.0, True, lambda s: np.zeros_like(s))
    if kind == "linear":
        if gamma <= 0.0:
            raise ValueError("linear nonlinearity needs gamma > 0")
        return NonlinearitySpec("linear", gamma, gamma, True, lambda s, g=gamma: g * s)
    if kind == "tanh":
        if gamma <= 0.0:
            raise ValueError("tanh nonlinearity needs gamma > 0")
        return NonlinearitySpec("tanh", gamma, gamma, True, lambda s, g=gamma: g * np.tanh(s))
    raise ValueError(f"unknown nonlinearity kind {kind!r}")


def apply_nonlinearity(nl: NonlinearitySpec, coeffs: np.ndarray, basis: FourierBasis) -> np.ndarray:
    """Apply the pointwise function on the grid and project back."""
    return basis.to_coeffs(nl.phi(basis.to_grid(coeffs)))


# ---------------------------------------------------------------------------
# Scenario operator providers
# ---------------------------------------------------------------------------


class McfSphereProvider:
    """Diagonal pulled-back drift of the heat equation on the shrinking sphere.

    Pairs in the unweighted reference L2 space; the certification constants
    of this scenario are c = c3 = 2 n^2 / (1 - 2 n T) and the coercivity
    triple (2 (1 + n^2/(1 - 2 n T)), 2, 2).
    """

    linear = True
    mean_zero = False
    alpha = 2.0

    def __init__(self, manifold: ReferenceManifold, horizon: float, n: int | None = None):
        if manifold.kind != CIRCLE:
            raise ValueError("shrinking-sphere drift requires the circle manifold")
        self.manifold = manifold
        self.n = manifold.ambient_n if n is None else n
        if horizon >= 1.0 / (2.0 * self.n):
            raise ValueError("horizon must stay below the collapse time 1/(2n)")
        self.horizon = horizon

    def operator(self, t: float) -> GalerkinOperator:
        return assemble_mcf_sphere(self.n, t, self.manifold.mode_count)

    __call__ = operator

    def h_norm_sq(self, coeffs, t):
        return float(coeffs @ coeffs)

    def v_norm(self, coeffs):
        return float(np.sqrt(self.manifold.basis.v_norm_sq(coeffs)))

    def diagonal_integral(self, m: int, s: float, t: float) -> float:
        """Closed form of int_s^t d_m(r) dr for exact per-mode statistics."""
        lam = self.manifold.basis.eigenvalues[m]
        n = float(self.n)
        return (n**2 - lam) / (2.0 * n) * np.log((1.0 - 2.0 * n * s) / (1.0 - 2.0 * n * t))

    def analytic_constants(self, nm=None) -> dict:
        n = float(self.n)
        grow = n**2 / (1.0 - 2.0 * n * self.horizon)
        return {
            "c": 2.0 * grow,
            "c1": 2.0 * (1.0 + grow),
            "c2": 2.0,
            "alpha": 2.0,
            "c3": 2.0 * grow,
        }

    def describe(self) -> str:
        return f"mcf_sphere(n={self.n},T={self.horizon!r},{self.manifold.describe()})"


class StaticHeatProvider:
    """Laplace-Beltrami drift on the static unit reference manifold.

    The full certification set of this scenario is c = 0, coercivity
    (2, 2, 2) with the squared embedding norm as the additive process, and
    boundedness constant 1.
    """

    linear = True
    mean_zero = False
    alpha = 2.0

    def __init__(self, manifold: ReferenceManifold, horizon: float = 1.0):
        self.manifold = manifold
        self.horizon = horizon
        self._diag = -manifold.basis.eigenvalues

    def operator(self, t: float) -> GalerkinOperator:
        diag = self._diag
        return GalerkinOperator(
            t=t,
            mode_count=self.manifold.mode_count,
            action=lambda u, d=diag: d * u,
            pairing=lambda u, v, d=diag: float((d * u) @ v),
            diagonal=diag,
            linear=True,
        )

    __call__ = operator

    def h_norm_sq(self, coeffs, t):
        return float(coeffs @ coeffs)

    def v_norm(self, coeffs):
        return float(np.sqrt(self.manifold.basis.v_norm_sq(coeffs)))

    def diagonal_integral(self, m: int, s: float, t: float) -> float:
        return float(self._diag[m]) * (t - s)

    def analytic_constants(self, nm=None) -> dict:
        return {"c": 0.0, "c1": 2.0, "c2": 2.0, "alpha": 2.0, "c3": 1.0}

    def describe(self) -> str:
        return f"static_heat({self.manifold.describe()})"


class MovingSurfaceProvider:
    """Moving-surface drift with bounded velocity-curvature term, paired in
    the weighted volume space.

    The certification constants are built from the module-computed bounds:
    monotonicity 2 b2 k1 / a2, coercivity (2 (b2 k1/a2 + a3/b3),
    2 a2 a3 / b3, 2), boundedness 2 max(b2 b3 / a2, b2 k1).
    """

    linear = True
    mean_zero = False
    alpha = 2.0

    def __init__(self, mf: MetricFamily, vh, k1: float):
        self.mf = mf
        self.manifold = mf.base
        self.vh = vh
        self.k1 = float(k1)
        self.horizon = mf.horizon

    def operator(self, t: float) -> GalerkinOperator:
        return assemble_moving_surface(self.mf, self.vh, t, self.k1)

    __call__ = operator

    def h_norm_sq(self, coeffs, t):
        return self.mf.h_g_norm_sq(coeffs, t)

    def v_norm(self, coeffs):
        return float(np.sqrt(self.manifold.basis.v_norm_sq(coeffs)))

    def analytic_constants(self, nm=None) -> dict:
        a2, b2 = norm_equivalence_constants(self.mf)
        a3, b3 = gradient_form_bounds(self.mf)
        # b3 also bounds |g^{11} du dv| <= b |du| |dv| on the isotropic circle
        return {
            "c": 2.0 * b2 * self.k1 / a2,
            "c1": 2.0 * (b2 * self.k1 / a2 + a3 / b3),
            "c2": 2.0 * a2 * a3 / b3,
            "alpha": 2.0,
            "c3": 2.0 * max(b2 * b3 / a2, b2 * self.k1),
        }

    def describe(self) -> str:
        return f"moving_surface(k1={self.k1!r},{self.mf.describe()})"


class GeneralParabolicProvider:
    """Conjugated parabolic drift over an isotropic metric evolution.

    Monotonicity is certified with 2 q2 ||c~||_inf; the coercivity pair is
    taken from the gradient-form lower bound a3 of the metric family, which
    matches the measure-compensated pairing used here. Boundedness uses
    3 q1 max(a_upper, ||b||_inf, ||c~||_inf).
    """

    linear = True
    mean_zero = False
    alpha = 2.0

    def __init__(self, coef: ParabolicCoefficients, pmap: PullbackMap):
        self.coef = coef
        self.pmap = pmap
        self.manifold = pmap.metric.base
        self.horizon = pmap.horizon

    def operator(self, t: float) -> GalerkinOperator:
        return assemble_general_parabolic(self.coef, self.pmap, t)

    __call__ = operator

    def h_norm_sq(self, coeffs, t):
        return float(coeffs @ coeffs)

    def v_norm(self, coeffs):
        return float(np.sqrt(self.manifold.basis.v_norm_sq(coeffs)))

    def diagonal_integral(self, m: int, s: float, t: float) -> float:
        op = self.operator(0.0)
        if op.diagonal is None:
            raise ValueError("closed-form mode statistics need a diagonal drift")
        lam = self.manifold.basis.eigenvalues[m]
        a0 = self.coef.a_grid[0]
        ct = self.coef.ct_grid[0]
        from scipy.integrate import quad

        mf = self.pmap.metric
        val, _ = quad(lambda r: -a0 * lam * mf.g11(r) - ct, s, t, limit=200)
        return float(val)

    def analytic_constants(self, nm=None) -> dict:
        a3, _ = gradient_form_bounds(self.pmap.metric)
        ct, ab, bb = self.coef.ct_inf, self.coef.a_lower, self.coef.a_upper
        return {
            "c": 2.0 * self.pmap.q2 * ct,
            "c1": 2.0 * (ct + ab * a3),
            "c2": 2.0 * ab * a3,
            "alpha": 2.0,
            "c3": 3.0 * self.pmap.q1 * max(bb, self.coef.b_inf, ct),
        }

    def describe(self) -> str:
        return f"general_parabolic({self.pmap.metric.describe()})"


class PLaplaceProvider:
    """p-Laplace drift on the mean-zero subspace of a static manifold.

    The weak form is monotone with constant 0, coercive with exponent p
    and constant min(1, 1/C_p) where C_p is the mean-zero Poincare
    constant, and bounded by the (p-1)-th power of the W^{1,p} norm.
    """

    linear = False
    mean_zero = True

    def __init__(self, p: float, mf: MetricFamily, horizon: float = 1.0):
        if p <= 2.0:
            raise ValueError("p must be > 2")
        if not mf.is_static():
            raise ValueError("the p-Laplace scenario requires a static metric")
        self.p = float(p)
        self.alpha = float(p)
        self.mf = mf
        self.manifold = mf.base
        self.horizon = horizon

    def operator(self, t: float) -> GalerkinOperator:
        p, mf = self.p, self.mf
        return GalerkinOperator(
            t=t,
            mode_count=self.manifold.mode_count,
            action=lambda u: p_laplace_action(u, p, mf),
            pairing=lambda u, v: p_laplace_pairing(u, v, p, mf),
            diagonal=None,
            linear=False,
        )

    __call__ = operator

    def h_norm_sq(self, coeffs, t):
        return float(coeffs @ coeffs)

    def v_norm(self, coeffs):
        return w1p_norm(coeffs, self.p, self.mf)

    def sweep_pairing(self, u, v, x, lams, t):
        """pairing(u + lam v, x) over a lambda grid, vectorized on the grid."""
        basis = self.manifold.basis
        g11 = self.mf.g11(t)
        sd = self.mf.sqrt_det(t)
        du = basis.grid_deriv(u)
        dv = basis.grid_deriv(v)
        dx = basis.grid_deriv(x)
        W = du[None, :] + np.asarray(lams)[:, None] * dv[None, :]
        integrand = np.power(g11 * W * W, 0.5 * (self.p - 2.0)) * g11 * W
        return -(integrand * (dx * sd * basis.weights)[None, :]).sum(axis=1)

    def poincare_constant(self) -> float:
        # static isotropic circle: smallest nonzero eigenvalue is 1/factor
        return float(np.sqrt(self.mf.factor(0.0)))

    def analytic_constants(self, nm=None) -> dict:
        cp = self.poincare_constant()
        return {
            "c": 0.0,
            "c1": 0.0,
            "c2": min(1.0, 1.0 / cp),
            "alpha": self.p,
            "c3": 1.0,
        }

    def describe(self) -> str:
        return f"p_laplace(p={self.p!r},{self.mf.describe()})"
