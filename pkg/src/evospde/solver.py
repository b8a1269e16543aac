"""Time integration of the spectral coefficient equations.

The reference equation dX = A(t) X dt - phi(X) dt + i dW is advanced by
Euler-Maruyama steps in coefficient space, either semi-implicit (the
linear drift treated implicitly, nonlinearity and noise explicit) or fully
explicit. The semi-implicit default matters for the shrinking-sphere
drift, whose diagonal grows like 1/(1 - 2 n t) near the collapse time.

Noise is evaluated at the left endpoint of each step (Ito convention).
Replicas draw from independent streams keyed by (master_seed, replica),
and coupled coarse/fine paths for strong-error studies share noise by
summing fine increments into coarse ones.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .geometry import MetricFamily, PullbackMap, ReferenceManifold
from .noise import NoiseModel, replica_stream
from .operators import NonlinearitySpec, apply_nonlinearity

_SCHEMES = ("semi_implicit", "explicit_em")


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    scheme: str = "semi_implicit"
    record_stride: int = 1
    master_seed: int = 0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {_SCHEMES}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")


@dataclass
class SpectralState:
    """Reference-basis coefficients of the solution at one time."""

    t: float
    coeffs: np.ndarray

    def h0_norm_sq(self) -> float:
        # einsum keeps the summation order identical to the batched path
        return float(np.einsum("i,i->", self.coeffs, self.coeffs))


@dataclass
class Trajectory:
    """Strided record of one solution path.

    sup_h0_sq tracks the running supremum of the squared reference norm
    over every step, recorded or not.
    """

    times: np.ndarray
    states: np.ndarray
    h0_norms_sq: np.ndarray
    hgt_norms_sq: np.ndarray
    sup_h0_sq: float
    master_seed: int
    replica: int
    digest: str


@dataclass
class Scenario:
    """Everything needed to integrate one equation.

    provider maps t to the GalerkinOperator snapshot; metric supplies the
    weighted norms along the path; noise may be None for deterministic
    runs; u0 holds the initial coefficients.
    """

    manifold: ReferenceManifold
    metric: MetricFamily
    provider: object
    u0: np.ndarray
    horizon: float
    noise: Optional[NoiseModel] = None
    nl: Optional[NonlinearitySpec] = None
    pmap: Optional[PullbackMap] = None
    label: str = "scenario"

    def __post_init__(self):
        dim = 2 * self.manifold.mode_count + 1
        if self.noise is not None and self.noise.mode_count > dim:
            raise ValueError(
                f"noise truncation J = {self.noise.mode_count} exceeds the basis dimension {dim}"
            )

    def digest(self) -> str:
        parts = [
            self.manifold.describe(),
            self.metric.describe(),
            self.provider.describe(),
            self.noise.describe() if self.noise is not None else "noise:off",
            self.nl.describe() if self.nl is not None else "nl:none",
            repr(float(self.horizon)),
            np.asarray(self.u0, dtype=float).tobytes().hex(),
        ]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()

    def sigma_padded(self) -> np.ndarray:
        """Noise weights aligned with the basis, zero beyond the truncation."""
        dim = 2 * self.manifold.mode_count + 1
        sig = np.zeros(dim)
        if self.noise is not None:
            J = min(self.noise.mode_count, dim)
            sig[:J] = self.noise.sigma[:J]
        return sig


def step(state: SpectralState, provider, nl, inc, cfg: SolverConfig) -> SpectralState:
    """Advance one Euler-Maruyama step.

    Semi-implicit solves (I - dt A(t+dt)) v+ = v - dt phi(v) + xi; the
    explicit scheme uses v+ = v + dt A(t) v - dt phi(v) + xi. A singular
    implicit system (1 - dt d_k = 0) is reported, never regularized.
    """
    dt = cfg.dt
    v = state.coeffs
    if inc is not None:
        if abs(inc.dt - dt) > 1e-15:
            raise ValueError("increment step does not match the solver step")
        xi = inc.xi
    else:
        xi = 0.0

    if nl is not None and nl.kind != "zero":
        basis = _basis_of(provider)
        rhs_nl = -dt * apply_nonlinearity(nl, v, basis)
    else:
        rhs_nl = 0.0

    if cfg.scheme == "semi_implicit":
        op = provider.operator(state.t + dt)
        rhs = v + rhs_nl + xi
        if op.diagonal is not None:
            denom = 1.0 - dt * op.diagonal
            if np.any(np.abs(denom) < 1e-14):
                raise ZeroDivisionError(
                    f"singular implicit system at t = {state.t + dt}: 1 - dt d_k = 0"
                )
            new = rhs / denom
        elif op.linear:
            dim = v.size
            mat = np.eye(dim) - dt * op.dense_action_matrix(dim)
            new = np.linalg.solve(mat, rhs)
        else:
            raise ValueError("semi_implicit needs a linear drift; use explicit_em")
    else:
        op = provider.operator(state.t)
        new = v + dt * op.action(v) + rhs_nl + xi

    return SpectralState(t=state.t + dt, coeffs=new)


def _basis_of(provider):
    return provider.manifold.basis


def _n_steps(horizon: float, dt: float) -> int:
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError(f"dt = {dt} does not divide the horizon {horizon}")
    return n


def _explicit_guard(provider, cfg: SolverConfig, horizon: float):
    op0 = provider.operator(0.0)
    if op0.diagonal is None:
        return
    worst = 0.0
    for t in np.linspace(0.0, horizon, 17):
        d = provider.operator(min(t, horizon)).diagonal
        worst = max(worst, float(np.max(np.abs(d))))
    if cfg.dt * worst >= 0.5:
        raise ValueError(
            f"explicit_em unstable: dt * max|d_k| = {cfg.dt * worst:.3g} >= 0.5"
        )


def draw_increments(scenario: Scenario, cfg: SolverConfig, replica: int, n_steps: int):
    """All noise increments of one replica, drawn once from its stream."""
    if scenario.noise is None:
        return None
    rng = replica_stream(cfg.master_seed, replica)
    z = rng.normal(size=(n_steps, scenario.noise.mode_count))
    return z * (np.sqrt(cfg.dt) * scenario.noise.sigma)


def solve_path(scenario: Scenario, cfg: SolverConfig, replica: int = 0) -> Trajectory:
    """Integrate one replica from u0 to the horizon.

    Aborts with the step index if the state leaves the finite range. The
    result is a bit-exact function of (scenario, cfg, replica).
    """
    n_steps = _n_steps(scenario.horizon, cfg.dt)
    if cfg.scheme == "explicit_em":
        _explicit_guard(scenario.provider, cfg, scenario.horizon)
    dim = 2 * scenario.manifold.mode_count + 1
    u0 = np.asarray(scenario.u0, dtype=float)
    if u0.shape != (dim,):
        raise ValueError(f"u0 must have shape ({dim},)")

    incs = draw_increments(scenario, cfg, replica, n_steps)
    xi_template = _IncView(cfg.dt)

    state = SpectralState(t=0.0, coeffs=u0.copy())
    sup_sq = state.h0_norm_sq()
    times = [0.0]
    states = [state.coeffs.copy()]
    h0 = [sup_sq]
    hgt = [scenario.metric.h_g_norm_sq(state.coeffs, 0.0)]

    pad = None
    if incs is not None and incs.shape[1] != dim:
        pad = np.zeros(dim)

    for i in range(n_steps):
        if incs is None:
            inc = None
        else:
            xi = incs[i]
            if pad is not None:
                pad[: xi.size] = xi
                xi = pad
            xi_template.xi = xi
            inc = xi_template
        state = step(state, scenario.provider, scenario.nl, inc, cfg)
        # snap to the uniform grid so time-dependent coefficients are
        # evaluated at bit-identical times across solvers
        state.t = (i + 1) * cfg.dt
        if not np.all(np.isfinite(state.coeffs)):
            raise FloatingPointError(f"non-finite state at step {i + 1} (t = {state.t})")
        nsq = state.h0_norm_sq()
        sup_sq = max(sup_sq, nsq)
        if (i + 1) % cfg.record_stride == 0 or i + 1 == n_steps:
            times.append(state.t)
            states.append(state.coeffs.copy())
            h0.append(nsq)
            hgt.append(scenario.metric.h_g_norm_sq(state.coeffs, min(state.t, scenario.horizon)))

    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        h0_norms_sq=np.asarray(h0),
        hgt_norms_sq=np.asarray(hgt),
        sup_h0_sq=sup_sq,
        master_seed=cfg.master_seed,
        replica=replica,
        digest=scenario.digest(),
    )


class _IncView:
    """Lightweight increment holder reused across steps."""

    __slots__ = ("dt", "xi")

    def __init__(self, dt):
        self.dt = dt
        self.xi = None


def _diagonal_table(provider, times: np.ndarray) -> np.ndarray:
    """Diagonals d_k(t) stacked over the given times; None entries invalid."""
    rows = []
    for t in times:
        op = provider.operator(float(t))
        if op.diagonal is None:
            raise ValueError("batch integration requires a diagonal drift")
        rows.append(op.diagonal)
    return np.asarray(rows)


def simulate_batch(scenario: Scenario, cfg: SolverConfig, replicas, chunk: int = 512):
    """Vectorized integration of many replicas of a diagonal linear scenario.

    Returns (final_coeffs, sup_h0_sq) with one row per replica. Each
    replica consumes its own noise stream exactly as solve_path does, so
    rows agree bit-for-bit with individual solve_path runs.
    """
    if scenario.nl is not None and scenario.nl.kind != "zero":
        raise ValueError("simulate_batch supports linear scenarios only")
    if cfg.scheme != "semi_implicit":
        raise ValueError("simulate_batch implements the semi-implicit scheme")
    n_steps = _n_steps(scenario.horizon, cfg.dt)
    dim = 2 * scenario.manifold.mode_count + 1
    # i*dt + dt matches the accumulation in solve_path bit for bit
    times_next = np.arange(n_steps) * cfg.dt + cfg.dt
    denom = 1.0 - cfg.dt * _diagonal_table(scenario.provider, times_next)
    if np.any(np.abs(denom) < 1e-14):
        raise ZeroDivisionError("singular implicit system in batch integration")

    replicas = list(replicas)
    finals = np.empty((len(replicas), dim))
    sups = np.empty(len(replicas))
    u0 = np.asarray(scenario.u0, dtype=float)

    for lo in range(0, len(replicas), chunk):
        block = replicas[lo : lo + chunk]
        m = len(block)
        if scenario.noise is not None:
            J = scenario.noise.mode_count
            xi = np.empty((m, n_steps, J))
            scale = np.sqrt(cfg.dt) * scenario.noise.sigma
            for r, rep in enumerate(block):
                rng = replica_stream(cfg.master_seed, rep)
                xi[r] = rng.normal(size=(n_steps, J)) * scale
        else:
            xi = None
        v = np.broadcast_to(u0, (m, dim)).copy()
        sup = np.full(m, float(u0 @ u0))
        for i in range(n_steps):
            if xi is not None:
                v[:, : xi.shape[2]] += xi[:, i, :]
            v /= denom[i]
            sup = np.maximum(sup, np.einsum("ij,ij->i", v, v))
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite state in batch integration")
        finals[lo : lo + m] = v
        sups[lo : lo + m] = sup
    return finals, sups


def strong_order_errors(
    scenario: Scenario,
    dt_ref: float,
    coarse_dts,
    M: int,
    master_seed: int,
    chunk: int = 16,
) -> np.ndarray:
    """Root-mean-square strong errors at the horizon under shared noise.

    Each coarse increment is the sum of the fine increments it covers, so
    coarse and reference paths are driven by the same Brownian motion.
    Requires a diagonal linear drift and coarse steps that are integer
    multiples of the reference step.
    """
    n_ref = _n_steps(scenario.horizon, dt_ref)
    ratios = []
    for dtc in coarse_dts:
        ratio = int(round(dtc / dt_ref))
        if abs(ratio * dt_ref - dtc) > 1e-12 or n_ref % ratio != 0:
            raise ValueError(f"coarse dt {dtc} is not nested in the reference step {dt_ref}")
        ratios.append(ratio)

    dim = 2 * scenario.manifold.mode_count + 1
    u0 = np.asarray(scenario.u0, dtype=float)
    denom_ref = 1.0 - dt_ref * _diagonal_table(
        scenario.provider, np.arange(n_ref) * dt_ref + dt_ref
    )
    denom_coarse = []
    for dtc, ratio in zip(coarse_dts, ratios):
        nc = n_ref // ratio
        denom_coarse.append(
            1.0 - dtc * _diagonal_table(scenario.provider, np.arange(nc) * dtc + dtc)
        )

    sq_err = np.zeros(len(coarse_dts))
    sigma = scenario.sigma_padded()[None, :] if scenario.noise is not None else None
    J = scenario.noise.mode_count if scenario.noise is not None else 0

    for lo in range(0, M, chunk):
        m = min(chunk, M - lo)
        xi = np.zeros((m, n_ref, dim))
        if scenario.noise is not None:
            scale = np.sqrt(dt_ref) * scenario.noise.sigma
            for r in range(m):
                rng = replica_stream(master_seed, lo + r)
                xi[r, :, :J] = rng.normal(size=(n_ref, J)) * scale
        v_ref = np.broadcast_to(u0, (m, dim)).copy()
        v_c = [np.broadcast_to(u0, (m, dim)).copy() for _ in coarse_dts]
        acc = [np.zeros((m, dim)) for _ in coarse_dts]
        for i in range(n_ref):
            v_ref = (v_ref + xi[:, i, :]) / denom_ref[i]
            for lvl, ratio in enumerate(ratios):
                acc[lvl] += xi[:, i, :]
                if (i + 1) % ratio == 0:
                    v_c[lvl] = (v_c[lvl] + acc[lvl]) / denom_coarse[lvl][(i + 1) // ratio - 1]
                    acc[lvl][:] = 0.0
        for lvl in range(len(coarse_dts)):
            diff = v_c[lvl] - v_ref
            sq_err[lvl] += float(np.einsum("ij,ij->", diff, diff))
    return np.sqrt(sq_err / M)


def exact_linear_mode(m: int, t: float, scenario: Scenario):
    """Exact mean multiplier and variance of one linear mode at time t.

    For a diagonal drift the mode solves a scalar linear equation with
    additive noise, so the mean factor is exp(int_0^t d_m) and the
    variance is sigma_m^2 int_0^t exp(2 int_s^t d_m) ds, evaluated with
    adaptive quadrature at relative tolerance 1e-8.
    """
    provider = scenario.provider
    if not hasattr(provider, "diagonal_integral"):
        raise ValueError("exact mode statistics need a diagonal drift provider")
    if t < 0.0 or t > scenario.horizon + 1e-12:
        raise ValueError("t outside the scenario horizon")
    mean_mult = float(np.exp(provider.diagonal_integral(m, 0.0, t)))
    sigma_m = float(scenario.sigma_padded()[m])
    if t == 0.0 or sigma_m == 0.0:
        return mean_mult, 0.0
    integrand = lambda s: np.exp(2.0 * provider.diagonal_integral(m, s, t))
    var, _ = quad(integrand, 0.0, t, epsrel=1e-8, limit=200)
    return mean_mult, float(sigma_m**2 * var)


@dataclass
class PushforwardNorms:
    """Per-time norms of the solution transported onto the moving manifold."""

    times: np.ndarray
    h0_norms_sq: np.ndarray
    moving_norms_sq: np.ndarray


def pushforward_solution(traj: Trajectory, pmap: PullbackMap) -> PushforwardNorms:
    """Norms of F_t v along a trajectory, with the transported volume factor.

    The squared moving-manifold norm of each state obeys the sandwich
    a2 ||v||^2 <= ||F_t v||^2 <= b2 ||v||^2 with the norm-equivalence
    constants of the metric family.
    """
    if traj.times[-1] > pmap.horizon + 1e-12:
        raise ValueError("pullback map horizon does not cover the trajectory")
    moving = np.array(
        [pmap.h_t_norm_sq(state, min(t, pmap.horizon)) for t, state in zip(traj.times, traj.states)]
    )
    return PushforwardNorms(
        times=traj.times.copy(),
        h0_norms_sq=traj.h0_norms_sq.copy(),
        moving_norms_sq=moving,
    )


def trajectory_csv(traj: Trajectory, path, coeff_count: Optional[int] = None):
    """Write a trajectory as CSV: (t, H0_norm_sq, Hgt_norm_sq, coeff_0..)."""
    n_coeff = traj.states.shape[1] if coeff_count is None else min(coeff_count, traj.states.shape[1])
    with open(path, "w", newline="\n") as fh:
        head = ",".join(f"coeff_{m}" for m in range(n_coeff))
        fh.write(f"t,H0_norm_sq,Hgt_norm_sq{',' + head if head else ''}\n")
        for i in range(traj.times.size):
            row = [repr(float(traj.times[i])), repr(float(traj.h0_norms_sq[i])), repr(float(traj.hgt_norms_sq[i]))]
            row += [repr(float(c)) for c in traj.states[i, :n_coeff]]
            fh.write(",".join(row) + "\n")
