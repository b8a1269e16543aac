"""Reference manifolds, isotropic time-dependent metric families, pullback
maps, and a level-set demonstrator for metric-driven topology change.

A metric family scales a fixed reference metric by a positive time profile,

    g(x, t) = factor(t) * g(x, 0),

so the volume weight is sqrt(factor(t)) * sqrt|g(x, 0)| and the inverse
metric component is g^{11}(x, 0) / factor(t). Three profiles are supported:
the constant profile, the shrinking-sphere profile 1 - 2 n t (the squared
radius of a unit sphere moving by mean curvature in ambient dimension n),
and tabulated profiles, deterministic or sampled from geometric Brownian
motion.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .basis import FourierBasis, get_basis

CIRCLE = "circle"
TORUS = "torus"

_PROFILE_SCAN_SAMPLES = 513


def mcf_radius(t: float, n: int) -> float:
    """Radius at time t of a unit sphere shrinking by mean curvature.

    The ambient dimension is n; the radius is sqrt(1 - 2 n t) and the
    sphere collapses to a point at t = 1/(2 n).
    """
    if n < 2:
        raise ValueError("ambient dimension n must be >= 2")
    t_collapse = 1.0 / (2.0 * n)
    if t < 0.0 or t >= t_collapse:
        raise ValueError(
            f"t = {t} outside [0, {t_collapse}): the sphere has shrunk to a point"
        )
    return float(np.sqrt(1.0 - 2.0 * n * t))


class ConstantProfile:
    """Constant time profile (static metric, default the reference metric)."""

    kind = "constant"

    def __init__(self, value: float = 1.0):
        if value <= 0.0:
            raise ValueError("constant metric factor must be positive")
        self.value = float(value)

    def __call__(self, t):
        if np.ndim(t):
            return np.full(np.shape(t), self.value)
        return self.value

    def describe(self) -> str:
        return f"constant({self.value!r})"


class McfProfile:
    """Time profile 1 - 2 n t, the squared mean-curvature-flow radius."""

    kind = "mcf"

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("ambient dimension n must be >= 2")
        self.n = n

    def __call__(self, t):
        t = np.asarray(t, dtype=float) if np.ndim(t) else float(t)
        return 1.0 - 2.0 * self.n * t

    def describe(self) -> str:
        return f"mcf(n={self.n})"


class TableProfile:
    """Piecewise-linear time profile through tabulated (t_k, f_k) nodes."""

    kind = "table"

    def __init__(self, times: np.ndarray, values: np.ndarray, label: str = "table"):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise ValueError("profile table needs matching 1-d times and values")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("profile table times must be strictly increasing")
        if np.any(values <= 0.0):
            raise ValueError("profile table values must be strictly positive")
        self.times = times
        self.values = values
        self.label = label

    def __call__(self, t):
        out = np.interp(t, self.times, self.values)
        return float(out) if np.ndim(t) == 0 else out

    def describe(self) -> str:
        digest = hashlib.sha256(self.times.tobytes() + self.values.tobytes())
        return f"{self.label}[{digest.hexdigest()[:12]}]"


@dataclass(frozen=True)
class ReferenceManifold:
    """Fixed one-dimensional reference manifold with its spectral grid.

    kind is "circle" (unit circle, closed-form shrinking-sphere scenarios
    apply with ambient dimension n) or "torus" (flat periodic interval).
    mode_count K retains frequencies 1..K next to the constant mode;
    grid_size must be at least 4 K + 1 so quartic basis products are
    integrated exactly by the uniform trapezoid rule.
    """

    kind: str
    ambient_n: int = 2
    mode_count: int = 8
    grid_size: int = 0

    def __post_init__(self):
        if self.kind not in (CIRCLE, TORUS):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.ambient_n < 2:
            raise ValueError("ambient_n must be >= 2")
        if self.grid_size == 0:
            object.__setattr__(self, "grid_size", 4 * self.mode_count + 1)
        if self.grid_size < 4 * self.mode_count + 1:
            raise ValueError("grid_size must be >= 4*mode_count + 1")

    @property
    def basis(self) -> FourierBasis:
        return get_basis(self.mode_count, self.grid_size)

    def describe(self) -> str:
        return f"{self.kind}(n={self.ambient_n},K={self.mode_count},G={self.grid_size})"


@dataclass(frozen=True)
class MetricFamily:
    """One-parameter isotropic metric family on a reference manifold.

    a1 and b1 bound the volume weight sqrt|g(x, t)| over the grid and the
    horizon. The reference metric on both supported manifolds has
    sqrt|g(x, 0)| = 1, so the weight equals sqrt(factor(t)) everywhere.
    """

    base: ReferenceManifold
    profile: object
    horizon: float
    a1: float
    b1: float
    sample_times: np.ndarray = field(repr=False)

    def factor(self, t):
        return self.profile(t)

    def sqrt_det(self, t) -> float:
        """Volume weight sqrt|g(., t)| (spatially constant)."""
        return float(np.sqrt(self.profile(t)))

    def g11(self, t) -> float:
        """Inverse metric component g^{11}(., t) (spatially constant)."""
        return 1.0 / float(self.profile(t))

    def h_g_norm_sq(self, coeffs: np.ndarray, t: float) -> float:
        """Squared weighted L2 norm, integral of u^2 sqrt|g_t| d theta."""
        return self.sqrt_det(t) * float(coeffs @ coeffs)

    def is_static(self, tol: float = 1e-12) -> bool:
        f = np.asarray(self.profile(self.sample_times))
        return bool(np.max(np.abs(f - f[0])) <= tol)

    def describe(self) -> str:
        return f"metric({self.base.describe()},{self.profile.describe()},T={self.horizon!r})"


def build_metric_family(base: ReferenceManifold, profile, horizon: float) -> MetricFamily:
    """Validate a time profile on [0, T] and record its weight bounds.

    Rejects profiles that are not strictly positive on the sampled horizon
    and shrinking-sphere horizons at or past the collapse time 1/(2 n).
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if isinstance(profile, McfProfile):
        if base.kind != CIRCLE:
            raise ValueError("mcf profile requires the circle manifold")
        t_collapse = 1.0 / (2.0 * profile.n)
        if horizon >= t_collapse:
            raise ValueError(
                f"mcf horizon T = {horizon} must satisfy T < 1/(2n) = {t_collapse}"
            )
    if isinstance(profile, TableProfile):
        if profile.times[0] > 0.0 or profile.times[-1] < horizon:
            raise ValueError("profile table does not cover [0, T]")
        sample_times = np.union1d(
            profile.times[profile.times <= horizon],
            np.linspace(0.0, horizon, _PROFILE_SCAN_SAMPLES),
        )
    else:
        sample_times = np.linspace(0.0, horizon, _PROFILE_SCAN_SAMPLES)

    f = np.asarray(profile(sample_times), dtype=float)
    if np.any(f <= 0.0):
        raise ValueError("metric factor must be strictly positive on [0, T]")
    weights = np.sqrt(f)
    return MetricFamily(
        base=base,
        profile=profile,
        horizon=horizon,
        a1=float(weights.min()),
        b1=float(weights.max()),
        sample_times=sample_times,
    )


def norm_equivalence_constants(mf: MetricFamily) -> tuple[float, float]:
    """Tight constants (a2, b2) with a2 ||u||_H0^2 <= ||u||_{H_gt}^2 <= b2 ||u||_H0^2.

    For an isotropic family the weighted and reference volume elements
    differ by the spatially constant ratio sqrt(factor(t)), so the scan
    over sampled times is exact up to table lookup.
    """
    ratios = np.sqrt(np.asarray(mf.profile(mf.sample_times), dtype=float))
    return float(ratios.min()), float(ratios.max())


def gradient_form_bounds(mf: MetricFamily) -> tuple[float, float]:
    """Constants (a3, b3) sandwiching the inverse-metric gradient form.

    a3 |du|^2 <= g^{11}(., t) (du)^2 <= b3 |du|^2 over the grid and the
    sampled horizon; on an isotropic family these are the extremes of
    1/factor(t).
    """
    inv = 1.0 / np.asarray(mf.profile(mf.sample_times), dtype=float)
    return float(inv.min()), float(inv.max())


@dataclass(frozen=True)
class PullbackMap:
    """Transport between the reference manifold and its rescaled version.

    The isotropic rescaling x -> x sqrt(factor(t)) is the identity in the
    angular chart, so the map acts as the identity on coefficient vectors
    and all scaling lives in the time-dependent norms. The composition of
    the map with its measure-compensated inverse is the identity on H0,
    and the squared-norm sandwiches

        p1 ||u||_{V0}^2 <= ||F_t u||_{V_t}^2 <= q1 ||u||_{V0}^2
        p2 ||u||_{H0}^2 <= ||F_t u||_{H_t}^2 <= q2 ||u||_{H0}^2

    hold with the scanned constants stored on the instance.
    """

    metric: MetricFamily
    kind: str = "isotropic"
    p1: float = 0.0
    q1: float = 0.0
    p2: float = 0.0
    q2: float = 0.0

    def __post_init__(self):
        if self.kind != "isotropic":
            raise ValueError("only isotropic pullback maps are supported")
        f0 = float(self.metric.factor(0.0))
        if abs(f0 - 1.0) > 1e-12:
            raise ValueError("pullback map requires factor(0) = 1")
        w = np.sqrt(np.asarray(self.metric.profile(self.metric.sample_times), dtype=float))
        object.__setattr__(self, "p2", float(w.min()))
        object.__setattr__(self, "q2", float(w.max()))
        object.__setattr__(self, "p1", float(np.minimum(w, 1.0 / w).min()))
        object.__setattr__(self, "q1", float(np.maximum(w, 1.0 / w).max()))

    @property
    def horizon(self) -> float:
        return self.metric.horizon

    def _check_time(self, t: float):
        if t < 0.0 or t > self.metric.horizon + 1e-12:
            raise ValueError(f"t = {t} outside [0, {self.metric.horizon}]")

    def apply(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        """Coefficients of F_t u in the chart of the rescaled manifold."""
        self._check_time(t)
        return np.array(coeffs, dtype=float, copy=True)

    def adjoint_apply(self, coeffs: np.ndarray, t: float) -> np.ndarray:
        """Measure-compensated inverse transport; F*_t F_t is the identity."""
        self._check_time(t)
        return np.array(coeffs, dtype=float, copy=True)

    def h_t_norm_sq(self, coeffs: np.ndarray, t: float) -> float:
        """Squared L2 norm of F_t u on the rescaled manifold."""
        self._check_time(t)
        return self.metric.h_g_norm_sq(coeffs, t)

    def v_t_norm_sq(self, coeffs: np.ndarray, t: float) -> float:
        """Squared H1 norm of F_t u on the rescaled manifold."""
        self._check_time(t)
        basis = self.metric.base.basis
        f = float(self.metric.factor(t))
        grad = basis.deriv_coeffs(coeffs)
        return float(np.sqrt(f) * (coeffs @ coeffs) + (grad @ grad) / np.sqrt(f))


@dataclass(frozen=True)
class GbmDriver:
    """Parameters of a geometric Brownian metric factor.

    The drift condition r - sigma^2/2 < 0 keeps log-factor drift negative,
    matching the admissible random-metric construction.
    """

    r: float
    sigma: float
    steps: int
    seed: int

    def __post_init__(self):
        if self.r - 0.5 * self.sigma**2 >= 0.0:
            raise ValueError(
                f"need r - sigma^2/2 < 0, got {self.r - 0.5 * self.sigma ** 2}"
            )
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


def gbm_factor_path(driver: GbmDriver, horizon: float) -> TableProfile:
    """Sample one geometric Brownian factor path on a uniform grid.

    Uses the closed form f(t) = exp((r - sigma^2/2) t + sigma B(t)) with a
    Brownian path built from independent Gaussian increments, so f(0) = 1
    exactly and every value is strictly positive. The path is a bit-exact
    function of (r, sigma, steps, seed).
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    times = np.linspace(0.0, horizon, driver.steps + 1)
    dt = horizon / driver.steps
    rng = np.random.default_rng(driver.seed)
    increments = rng.normal(0.0, np.sqrt(dt), driver.steps)
    brownian = np.concatenate(([0.0], np.cumsum(increments)))
    log_f = (driver.r - 0.5 * driver.sigma**2) * times + driver.sigma * brownian
    values = np.exp(log_f)
    return TableProfile(times, values, label=f"gbm(r={driver.r},sigma={driver.sigma},seed={driver.seed})")


def factor_table_csv(profile: TableProfile, path):
    """Write a factor table as CSV with columns (t, f)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("t,f\n")
        for t, f in zip(profile.times, profile.values):
            fh.write(f"{float(t)!r},{float(f)!r}\n")


# ---------------------------------------------------------------------------
# Level-set demonstrator: contours of a double-well height field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelSetField:
    """The double-well field f(x, y) = x^2/2 + (y^2 - 1)^2/2 on a grid.

    Its sublevel sets pinch at the origin, where f(0, 0) = 1/2: levels
    above 1/2 bound one curve, levels below bound two.
    """

    xmax: float = 1.5
    ymax: float = 1.5
    nx: int = 256
    ny: int = 256

    def __post_init__(self):
        if self.nx < 64 or self.ny < 64:
            raise ValueError("grid resolution must be at least 64 x 64")

    @staticmethod
    def height(x, y):
        return 0.5 * x**2 + 0.5 * (y**2 - 1.0) ** 2

    def grids(self):
        x = np.linspace(-self.xmax, self.xmax, self.nx)
        y = np.linspace(-self.ymax, self.ymax, self.ny)
        return x, y

    def values(self) -> np.ndarray:
        x, y = self.grids()
        return self.height(x[None, :], y[:, None])  # shape (ny, nx)


# Segment table for marching squares. Cell corners are indexed
#   0: (i, j)   1: (i+1, j)   2: (i+1, j+1)   3: (i, j+1)
# and edges 0..3 are bottom, right, top, left. Each case lists edge pairs
# to connect; saddle cases 5 and 10 are resolved with the cell-center value.
_MS_SEGMENTS = {
    0: [],
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    5: None,  # saddle
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    10: None,  # saddle
    11: [(1, 2)],
    12: [(1, 3)],
    13: [(0, 1)],
    14: [(3, 0)],
    15: [],
}


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, a):
        parent = self.parent
        root = a
        while parent.setdefault(root, root) != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def level_set_components(field: LevelSetField, c: float):
    """Extract the contour {f = c} and count its connected components.

    Marching squares with linear edge interpolation produces segments whose
    endpoints sit on grid edges; segments are glued by shared edges with a
    union-find pass, then chained into polylines. Returns (count, polylines)
    where polylines is a list of (n_points, 2) arrays, one per component.
    A level below the field minimum on the grid yields zero components.
    """
    if c <= 0.0:
        raise ValueError("contour level must be positive")
    x, y = field.grids()
    v = field.values() - c
    # nudge exact zeros off the contour so every edge crossing is transversal
    scale = max(abs(c), 1.0)
    v = np.where(v == 0.0, 1e-14 * scale, v)

    neg = v < 0.0
    # cells whose corner signs differ are the only ones that can carry segments
    cell_mix = (
        neg[:-1, :-1] | neg[:-1, 1:] | neg[1:, :-1] | neg[1:, 1:]
    ) & ~(neg[:-1, :-1] & neg[:-1, 1:] & neg[1:, :-1] & neg[1:, 1:])
    cells = np.argwhere(cell_mix)

    def edge_point(key):
        kind, i, j = key
        if kind == "h":
            v0, v1 = v[j, i], v[j, i + 1]
            s = v0 / (v0 - v1)
            return (x[i] + s * (x[i + 1] - x[i]), y[j])
        v0, v1 = v[j, i], v[j + 1, i]
        s = v0 / (v0 - v1)
        return (x[i], y[j] + s * (y[j + 1] - y[j]))

    segments = []
    uf = _UnionFind()
    for j, i in cells:
        corners = (v[j, i], v[j, i + 1], v[j + 1, i + 1], v[j + 1, i])
        case = sum(1 << idx for idx, val in enumerate(corners) if val < 0.0)
        edges = {
            0: ("h", i, j),
            1: ("v", i + 1, j),
            2: ("h", i, j + 1),
            3: ("v", i, j),
        }
        pairs = _MS_SEGMENTS[case]
        if pairs is None:
            # saddle: split by the sign of the cell-center average
            center = 0.25 * sum(corners)
            if case == 5:
                pairs = [(3, 2), (0, 1)] if center < 0.0 else [(3, 0), (1, 2)]
            else:
                pairs = [(0, 1), (2, 3)] if center < 0.0 else [(3, 0), (1, 2)]
        for a, b in pairs:
            ka, kb = edges[a], edges[b]
            segments.append((ka, kb))
            uf.union(ka, kb)

    if not segments:
        return 0, []

    roots = {}
    for ka, kb in segments:
        roots.setdefault(uf.find(ka), []).append((ka, kb))

    polylines = []
    for segs in roots.values():
        adjacency = {}
        for ka, kb in segs:
            adjacency.setdefault(ka, []).append(kb)
            adjacency.setdefault(kb, []).append(ka)
        # open chains start at degree-1 nodes; closed loops start anywhere
        start = next((k for k, nb in adjacency.items() if len(nb) == 1), segs[0][0])
        chain = [start]
        prev = None
        node = start
        while True:
            nxt = next((nb for nb in adjacency[node] if nb != prev), None)
            if nxt is None or nxt == start:
                if nxt == start:
                    chain.append(start)
                break
            chain.append(nxt)
            prev, node = node, nxt
        polylines.append(np.array([edge_point(k) for k in chain]))

    return len(roots), polylines


def contour_csv(polylines, path):
    """Write contour polylines as CSV with columns (component_id, x, y)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("component_id,x,y\n")
        for cid, line in enumerate(polylines):
            for px, py in line:
                fh.write(f"{cid},{float(px)!r},{float(py)!r}\n")
