"""Numerical certification of the variational hypotheses and Monte Carlo
statistics.

The four hypothesis checks probe an operator provider with random
coefficient vectors whose entries are N(0, 1/(1 + lam_k)), balancing the
probe energy across the H1 scale so samples do not concentrate in smooth
functions. Estimates are suprema over the probe set:

  * weak monotonicity: sup of 2 <A u - A v, u - v> / ||u - v||_H^2 (the
    diffusion term drops since the noise map ignores the solution);
  * coercivity: max violation of 2 <A v, v> + ||i||_HS^2 <=
    c1 ||v||_H^2 - c2 ||v||_V^alpha + f with f the squared embedding norm;
  * boundedness: sup of ||A v||_{V*} / ||v||_V^{alpha-1}, the dual norm
    probed over all basis directions plus random unit vectors;
  * hemicontinuity: a sweep of lambda -> <A(u + lambda v), x> checked
    against an affine fit for linear drifts and against a local slope
    bound otherwise.

A check passes when its estimate stays within 5 percent of the declared
analytic constant (absolute 1e-10 for zero constants). Estimates are
suprema, hence monotone under sample growth.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .geometry import MetricFamily, norm_equivalence_constants
from .noise import NoiseModel
from .operators import apply_nonlinearity
from .solver import (
    Scenario,
    SolverConfig,
    simulate_batch,
    strong_order_errors,
)

SLACK = 1.05
ZERO_ATOL = 1e-10
COERCIVITY_TOL = 1e-8


def _probe(rng, basis, mean_zero: bool) -> np.ndarray:
    c = rng.normal(size=basis.dim) / np.sqrt(1.0 + basis.eigenvalues)
    if mean_zero:
        c[0] = 0.0
    return c


def _h_inner(provider, u, v, t) -> float:
    """Scenario inner product matching provider.h_norm_sq."""
    if hasattr(provider, "mf"):
        return provider.mf.sqrt_det(t) * float(u @ v)
    return float(u @ v)


def _nl_pairing(provider, nl, u, v, w, t) -> float:
    """<phi(u) - phi(v), w> in the scenario's pivot inner product."""
    basis = provider.manifold.basis
    pu = apply_nonlinearity(nl, u, basis)
    pv = apply_nonlinearity(nl, v, basis)
    return _h_inner(provider, pu - pv, w, t)


@dataclass
class CheckResult:
    estimate: float
    samples: np.ndarray
    seed: int


def check_weak_monotonicity(provider, nl=None, N: int = 200, seed: int = 0) -> CheckResult:
    """Estimate the monotonicity constant c over N random probe pairs."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(seed)
    basis = provider.manifold.basis
    samples = np.empty(N)
    for i in range(N):
        t = rng.uniform(0.0, provider.horizon)
        u = _probe(rng, basis, provider.mean_zero)
        v = _probe(rng, basis, provider.mean_zero)
        d = u - v
        op = provider.operator(t)
        num = 2.0 * (op.pairing(u, d) - op.pairing(v, d))
        if nl is not None and nl.kind != "zero":
            num -= 2.0 * _nl_pairing(provider, nl, u, v, d, t)
        samples[i] = num / provider.h_norm_sq(d, t)
    return CheckResult(float(samples.max()), samples, seed)


def check_coercivity(
    provider,
    nm: NoiseModel,
    N: int = 200,
    seed: int = 0,
    candidates: Optional[dict] = None,
    nl=None,
) -> CheckResult:
    """Max normalized violation of the coercivity inequality.

    The candidate triple (c1, c2, alpha) defaults to the provider's
    analytic constants; the additive process is the squared embedding
    norm on both sides.
    """
    if candidates is None:
        candidates = provider.analytic_constants(nm)
    c1, c2, alpha = candidates["c1"], candidates["c2"], candidates["alpha"]
    rng = np.random.default_rng(seed)
    basis = provider.manifold.basis
    hs_sq = nm.hs_norm_sq
    samples = np.empty(N)
    for i in range(N):
        t = rng.uniform(0.0, provider.horizon)
        v = _probe(rng, basis, provider.mean_zero)
        op = provider.operator(t)
        lhs = 2.0 * op.pairing(v, v) + hs_sq
        if nl is not None and nl.kind != "zero":
            lhs -= 2.0 * _nl_pairing(provider, nl, v, np.zeros_like(v), v, t)
        rhs = c1 * provider.h_norm_sq(v, t) - c2 * provider.v_norm(v) ** alpha + hs_sq
        scale = max(1.0, abs(lhs), abs(rhs))
        samples[i] = (lhs - rhs) / scale
    return CheckResult(float(samples.max()), samples, seed)


def _direction_set(provider, rng, n_random: int = 50) -> np.ndarray:
    basis = provider.manifold.basis
    dirs = [np.eye(basis.dim)[m] for m in range(basis.dim)]
    if provider.mean_zero:
        dirs = dirs[1:]
    for _ in range(n_random):
        dirs.append(_probe(rng, basis, provider.mean_zero))
    out = []
    for x in dirs:
        nv = provider.v_norm(x)
        if nv > 0.0:
            out.append(x / nv)
    return np.asarray(out)


def check_boundedness(provider, N: int = 200, seed: int = 0, alpha: Optional[float] = None, nl=None) -> CheckResult:
    """Estimate the boundedness constant c3 by dual-norm probing.

    ||A v||_{V*} is approximated as the max pairing against all basis
    directions plus 50 random V-unit vectors.
    """
    if alpha is None:
        alpha = provider.alpha
    rng = np.random.default_rng(seed)
    basis = provider.manifold.basis
    dirs = _direction_set(provider, rng)
    samples = np.empty(N)
    for i in range(N):
        t = rng.uniform(0.0, provider.horizon)
        v = _probe(rng, basis, provider.mean_zero)
        op = provider.operator(t)
        dual = 0.0
        for x in dirs:
            val = op.pairing(v, x)
            if nl is not None and nl.kind != "zero":
                val -= _nl_pairing(provider, nl, v, np.zeros_like(v), x, t)
            dual = max(dual, abs(val))
        samples[i] = dual / provider.v_norm(v) ** (alpha - 1.0)
    return CheckResult(float(samples.max()), samples, seed)


@dataclass
class HemicontinuityResult:
    max_gap: float
    slope: float
    affine_dev: float
    passed: bool
    seed: int


def _sweep_values(provider, op, u, v, x, lams, t):
    """<A(u + lam v), x> over the lambda grid, vectorized where possible."""
    if op.diagonal is not None:
        U = u[None, :] + lams[:, None] * v[None, :]
        return (U * op.diagonal) @ x
    if op.pairing_matrix is not None:
        U = u[None, :] + lams[:, None] * v[None, :]
        return (U @ op.pairing_matrix) @ x
    if hasattr(provider, "sweep_pairing"):
        return provider.sweep_pairing(u, v, x, lams, t)
    return np.array([op.pairing(u + lam * v, x) for lam in lams])


def check_hemicontinuity(provider, N: int = 20, seed: int = 0, lam_step: float = 1e-3) -> HemicontinuityResult:
    """Probe continuity of lambda -> <A(u + lambda v), x> on [-1, 1].

    Linear drifts must be affine in lambda to 1e-10 of scale; nonlinear
    drifts pass when the largest successive jump is bounded by the local
    slope times the lambda step.
    """
    rng = np.random.default_rng(seed)
    basis = provider.manifold.basis
    lams = np.arange(-1.0, 1.0 + 0.5 * lam_step, lam_step)
    max_gap = 0.0
    max_dev = 0.0
    max_slope = 0.0
    passed = True
    for _ in range(N):
        t = rng.uniform(0.0, provider.horizon)
        u = _probe(rng, basis, provider.mean_zero)
        v = _probe(rng, basis, provider.mean_zero)
        x = _probe(rng, basis, provider.mean_zero)
        op = provider.operator(t)
        vals = _sweep_values(provider, op, u, v, x, lams, t)
        gaps = np.abs(np.diff(vals))
        max_gap = max(max_gap, float(gaps.max()))
        scale = max(1.0, float(np.max(np.abs(vals))))
        if provider.linear:
            coeff = np.polyfit(lams, vals, 1)
            dev = float(np.max(np.abs(vals - np.polyval(coeff, lams)))) / scale
            max_dev = max(max_dev, dev)
            if dev > 1e-10:
                passed = False
        else:
            slope = float(np.max(np.abs(vals[2:] - vals[:-2])) / (2.0 * lam_step))
            max_slope = max(max_slope, slope)
            if gaps.max() > 1.5 * slope * lam_step + 1e-12 * scale:
                passed = False
    return HemicontinuityResult(max_gap, max_slope, max_dev, passed, seed)


def estimate_poincare(mf: MetricFamily) -> float:
    """Optimal mean-zero Poincare constant of a static metric.

    Assembles the stiffness and mass forms by quadrature and returns
    1/sqrt(mu_1) with mu_1 the smallest nonzero generalized eigenvalue.
    """
    if not mf.is_static():
        raise ValueError("the Poincare estimate requires a static metric family")
    basis = mf.base.basis
    g11 = mf.g11(0.0)
    sd = mf.sqrt_det(0.0)
    w = basis.weights
    D, B = basis.derivs, basis.values
    stiff = D.T @ (D * (w * g11 * sd)[:, None])
    mass = B.T @ (B * (w * sd)[:, None])
    mu = scipy.linalg.eigh(stiff, mass, eigvals_only=True)
    mu_pos = mu[mu > 1e-8]
    return float(1.0 / np.sqrt(mu_pos[0]))


@dataclass
class MomentEstimate:
    """Monte Carlo estimate of the expected running supremum of ||X||^2."""

    replicas: int
    mean: float
    se: float
    halfwidth: float


def estimate_sup_moment(scenario: Scenario, cfg: SolverConfig, M: int) -> MomentEstimate:
    """Mean of sup_t ||X(t)||^2 over M parallel replicas, with 3-sigma halfwidth."""
    if M < 100:
        raise ValueError("need at least 100 replicas")
    _, sups = simulate_batch(scenario, cfg, range(M))
    mean = float(sups.mean())
    se = float(sups.std(ddof=1) / np.sqrt(M))
    return MomentEstimate(replicas=M, mean=mean, se=se, halfwidth=3.0 * se)


@dataclass
class ConvergenceReport:
    """Strong-error decay against a shared-noise reference solution."""

    dts: np.ndarray
    errors: np.ndarray
    slope: float
    residual: float
    exact: bool


def estimate_strong_order(
    scenario: Scenario,
    dts,
    M: int,
    master_seed: int,
    dt_ref: float,
) -> ConvergenceReport:
    """Fit the strong order from errors at a descending nested dt grid."""
    dts = np.asarray(sorted(dts, reverse=True), dtype=float)
    if np.any(dts <= dt_ref):
        raise ValueError("every coarse dt must exceed the reference dt")
    errors = strong_order_errors(scenario, dt_ref, dts, M, master_seed)
    if np.all(errors < 1e-12):
        return ConvergenceReport(dts, errors, slope=float("nan"), residual=0.0, exact=True)
    coeff, residuals, *_ = np.polyfit(np.log(dts), np.log(errors), 1, full=True)
    residual = float(residuals[0]) if residuals.size else 0.0
    return ConvergenceReport(dts, errors, slope=float(coeff[0]), residual=residual, exact=False)


@dataclass
class HypothesisReport:
    """Combined certification record for one drift scenario."""

    scenario: str
    n_samples: int
    seed: int
    bounds: dict
    c_monotone: float
    c_pass: bool
    coercivity_violation: float
    coercivity_pass: bool
    c3_estimate: float
    c3_pass: bool
    hemicontinuity_gap: float
    hemicontinuity_pass: bool
    monotone_samples: np.ndarray = field(repr=False, default=None)
    coercivity_samples: np.ndarray = field(repr=False, default=None)
    boundedness_samples: np.ndarray = field(repr=False, default=None)

    @property
    def passed(self) -> bool:
        return bool(
            self.c_pass and self.coercivity_pass and self.c3_pass and self.hemicontinuity_pass
        )


def _within(estimate: float, bound: float) -> bool:
    return estimate <= SLACK * bound + ZERO_ATOL


def nonlinearity_shifted_constants(bounds: dict, nl, mf: MetricFamily) -> dict:
    """Constants of a drift perturbed by a monotone Lipschitz nonlinearity.

    The monotonicity constant is unchanged; the coercivity and boundedness
    constants shift by c_lip b2 / a2^2 with the norm-equivalence constants
    of the metric family.
    """
    a2, b2 = norm_equivalence_constants(mf)
    shift = nl.c_lip * b2 / a2**2
    out = dict(bounds)
    out["c1"] = out["c1"] + shift
    out["c3"] = out["c3"] + shift
    return out


def certify(provider, nm: NoiseModel, N: int = 500, seed: int = 0, nl=None, candidates=None) -> HypothesisReport:
    """Run all four hypothesis checks against the scenario's constants."""
    bounds = provider.analytic_constants(nm) if candidates is None else dict(candidates)
    mono = check_weak_monotonicity(provider, nl=nl, N=N, seed=seed)
    coer = check_coercivity(provider, nm, N=N, seed=seed + 1, candidates=bounds, nl=nl)
    bnd = check_boundedness(provider, N=N, seed=seed + 2, alpha=bounds["alpha"], nl=nl)
    hemi = check_hemicontinuity(provider, N=min(N, 50), seed=seed + 3)
    return HypothesisReport(
        scenario=provider.describe(),
        n_samples=N,
        seed=seed,
        bounds=bounds,
        c_monotone=mono.estimate,
        c_pass=_within(mono.estimate, bounds["c"]),
        coercivity_violation=coer.estimate,
        coercivity_pass=coer.estimate <= COERCIVITY_TOL,
        c3_estimate=bnd.estimate,
        c3_pass=_within(bnd.estimate, bounds["c3"]),
        hemicontinuity_gap=hemi.max_gap,
        hemicontinuity_pass=hemi.passed,
        monotone_samples=mono.samples,
        coercivity_samples=coer.samples,
        boundedness_samples=bnd.samples,
    )


def report_text(report: HypothesisReport) -> str:
    """Flat key=value rendering of a report."""
    lines = [
        f"scenario={report.scenario}",
        f"n_samples={report.n_samples}",
        f"seed={report.seed}",
    ]
    for key, val in report.bounds.items():
        lines.append(f"bound_{key}={val!r}")
    lines += [
        f"c_monotone={report.c_monotone!r}",
        f"c_pass={report.c_pass}",
        f"coercivity_violation={report.coercivity_violation!r}",
        f"coercivity_pass={report.coercivity_pass}",
        f"c3_estimate={report.c3_estimate!r}",
        f"c3_pass={report.c3_pass}",
        f"hemicontinuity_gap={report.hemicontinuity_gap!r}",
        f"hemicontinuity_pass={report.hemicontinuity_pass}",
        f"passed={report.passed}",
    ]
    return "\n".join(lines) + "\n"


def report_samples_csv(report: HypothesisReport, path):
    """Per-sample audit ratios for the three probe-based checks."""
    with open(path, "w", newline="\n") as fh:
        fh.write("check,sample,value\n")
        for name, arr in (
            ("monotonicity", report.monotone_samples),
            ("coercivity", report.coercivity_samples),
            ("boundedness", report.boundedness_samples),
        ):
            if arr is None:
                continue
            for i, val in enumerate(arr):
                fh.write(f"{name},{i},{float(val)!r}\n")
