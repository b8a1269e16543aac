"""Cylindrical Wiener noise through a truncated diagonal embedding.

The noise enters the equations as i dW where i is a Hilbert-Schmidt map
into the reference L2 space. Only the image matters, so the model stores
the mode weights sigma_j directly against the Fourier basis ordering
(constant, cos 1, sin 1, cos 2, ...): an increment over a step of length
dt has independent Gaussian coefficients with variance dt * sigma_j^2.
The canonical choice sigma_j = 1/j is square-summable with limit
sum sigma_j^2 -> pi^2/6.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import PullbackMap


@dataclass(frozen=True)
class NoiseModel:
    """Truncated diagonal noise embedding with mode weights sigma_j."""

    sigma: np.ndarray
    target_basis: str = "fourier"
    hs_norm_sq: float = 0.0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 1 or sigma.size < 1:
            raise ValueError("sigma must be a non-empty 1-d vector")
        if np.any(sigma <= 0.0):
            raise ValueError("all sigma_j must be positive")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "hs_norm_sq", float(sigma @ sigma))

    @property
    def mode_count(self) -> int:
        return int(self.sigma.size)

    def describe(self) -> str:
        import hashlib

        return f"noise(J={self.mode_count},{hashlib.sha256(self.sigma.tobytes()).hexdigest()[:12]})"


@dataclass(frozen=True)
class WienerIncrement:
    """Coefficients of one noise increment i dW in the reference basis."""

    dt: float
    xi: np.ndarray


def canonical_embedding(J: int) -> NoiseModel:
    """The weights sigma_j = 1/j for j = 1..J."""
    if J < 1:
        raise ValueError("truncation level J must be >= 1")
    return NoiseModel(sigma=1.0 / np.arange(1, J + 1, dtype=float))


def hs_norm(nm: NoiseModel) -> float:
    """Hilbert-Schmidt norm sqrt(sum sigma_j^2)."""
    return float(np.sqrt(nm.sigma @ nm.sigma))


def replica_stream(master_seed: int, replica: int) -> np.random.Generator:
    """Independent generator for one replica, derived from the master seed.

    Streams are keyed by (master_seed, replica), so replicas are
    reproducible and independent of execution order.
    """
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(replica,))
    )


def sample_increment(nm: NoiseModel, dt: float, stream: np.random.Generator) -> WienerIncrement:
    """Draw one increment with independent N(0, dt sigma_j^2) coefficients."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    xi = stream.normal(size=nm.mode_count) * (np.sqrt(dt) * nm.sigma)
    return WienerIncrement(dt=dt, xi=xi)


def pushforward_increment(pmap: PullbackMap, t: float, inc: WienerIncrement) -> WienerIncrement:
    """Transport an increment onto the rescaled manifold at time t.

    For isotropic rescaling the chart coefficients are unchanged; the
    increment is reinterpreted on the rescaled manifold, where its squared
    norm picks up the volume ratio sqrt(factor(t)).
    """
    return WienerIncrement(dt=inc.dt, xi=pmap.apply(inc.xi, t))


def increments_csv(increments, path):
    """Audit dump of increments as CSV with columns (step, j, xi)."""
    with open(path, "w", newline="\n") as fh:
        fh.write("step,j,xi\n")
        for step, inc in enumerate(increments):
            for j, val in enumerate(inc.xi, start=1):
                fh.write(f"{step},{j},{float(val)!r}\n")
