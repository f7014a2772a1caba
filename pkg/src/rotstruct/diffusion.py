"""Variance-preserving diffusion restricted to the zero-CoM subspace.

The forward process corrupts a configuration x to z_t = alpha_t x + sigma_t
eps with eps drawn from the projected Gaussian, so every noisy state stays in
the subspace. Sampling runs the learned reverse chain: each transition is the
Gaussian posterior of z_{t-1} given z_t and the denoiser's estimate of x,
followed by a projection. The denoiser predicts the unscaled noise; x is
recovered algebraically from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .subspace import MassWeights, project_zero_com, sample_projected_gaussian

SCHEDULE_KINDS = ("polynomial-2",)


class PerSampleNoise:
    """Noise source that gives each of K lockstep samples its own generator.

    Drawing a (K, ...) block stacks one (...) draw from each child stream, so
    a batched sampling run is bit-identical to K independent single-sample
    runs seeded with the same children.
    """

    def __init__(self, children: list[np.random.Generator]):
        if not children:
            raise ValueError("need at least one child generator")
        self.children = list(children)

    def standard_normal(self, shape) -> np.ndarray:
        if shape[0] != len(self.children):
            raise ValueError(
                f"leading axis {shape[0]} must match {len(self.children)} children"
            )
        return np.stack([g.standard_normal(shape[1:]) for g in self.children])


class TOutOfRange(ValueError):
    """Timestep outside 0..T (or 1..T for transitions)."""


class UnknownKind(ValueError):
    """Unrecognized noise-schedule identifier."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays alpha_t, sigma_t for t = 0..T with alpha^2 + sigma^2 = 1."""

    t_max: int
    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64)
        s = np.array(self.sigma, dtype=np.float64)
        if self.t_max < 1 or a.shape != (self.t_max + 1,) or s.shape != a.shape:
            raise ValueError("alpha and sigma must have length t_max + 1")
        if not np.all(np.diff(a) < 0.0):
            raise ValueError("alpha must be strictly decreasing")
        if not (a[0] >= 1.0 - 1e-4 and a[-1] <= 1e-2):
            raise ValueError("alpha endpoints out of range")
        if np.abs(a**2 + s**2 - 1.0).max() > 1e-12:
            raise ValueError("alpha^2 + sigma^2 must equal 1")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "sigma", s)
        a.flags.writeable = False
        s.flags.writeable = False


def make_schedule(t_max: int, kind: str = "polynomial-2") -> NoiseSchedule:
    """Build a noise schedule.

    "polynomial-2": alpha_t^2 = (1 - (t/T)^2)^2 * (1 - 2s) + s with s = 1e-5,
    forced monotone by a running minimum. Endpoints: alpha_0^2 = 1 - s,
    alpha_T^2 = s.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    if kind != "polynomial-2":
        raise UnknownKind(f"unknown schedule kind {kind!r}")
    s = 1e-5
    t = np.arange(t_max + 1, dtype=np.float64)
    alpha_sq = (1.0 - (t / t_max) ** 2) ** 2 * (1.0 - 2.0 * s) + s
    alpha_sq = np.minimum.accumulate(alpha_sq)
    alpha = np.sqrt(alpha_sq)
    sigma = np.sqrt(1.0 - alpha_sq)
    return NoiseSchedule(t_max=t_max, alpha=alpha, sigma=sigma)


def _check_t(t: int, sched: NoiseSchedule, *, low: int = 0):
    if not low <= t <= sched.t_max:
        raise TOutOfRange(f"t = {t} outside {low}..{sched.t_max}")


def corrupt(
    x: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    w: MassWeights,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Noise x to level t: returns (z_t, eps) with both in the subspace."""
    _check_t(t, sched)
    eps = sample_projected_gaussian(x.shape[-2], w, rng, shape_prefix=x.shape[:-2])
    z_t = sched.alpha[t] * x + sched.sigma[t] * eps
    return z_t, eps


def x_hat_from_eps(
    z_t: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule
) -> np.ndarray:
    """Invert the corruption: x_hat = z_t / alpha_t - (sigma_t / alpha_t) eps_hat."""
    _check_t(t, sched)
    a, s = sched.alpha[t], sched.sigma[t]
    return z_t / a - (s / a) * eps_hat


def posterior_from_alphas(alpha_prev: float, alpha_t: float) -> tuple[float, float, float]:
    """Posterior coefficients from a consecutive (alpha_{t-1}, alpha_t) pair.

    With the variance-preserving convention sigma^2 = 1 - alpha^2, the
    single-step transition has ratio alpha_t/alpha_{t-1} and variance
    sigma_t^2 - ratio^2 sigma_{t-1}^2; conditioning it on x by Gaussian Bayes
    gives the returned (coeff_z, coeff_x, variance).
    """
    s2_t = 1.0 - alpha_t**2
    s2_p = 1.0 - alpha_prev**2
    step = alpha_t / alpha_prev
    step_var = s2_t - step**2 * s2_p
    coeff_z = step * s2_p / s2_t
    coeff_x = alpha_prev * step_var / s2_t
    variance = step_var * s2_p / s2_t
    return float(coeff_z), float(coeff_x), float(variance)


def posterior_params(t: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Coefficients of the exact posterior q(z_{t-1} | z_t, x).

    Returns (coeff_z, coeff_x, variance): the posterior mean is
    coeff_z * z_t + coeff_x * x and the variance is isotropic.
    """
    _check_t(t, sched, low=1)
    return posterior_from_alphas(float(sched.alpha[t - 1]), float(sched.alpha[t]))


def sample(
    denoise: Callable[[np.ndarray, np.ndarray, int], np.ndarray],
    cond: np.ndarray,
    w: MassWeights,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    n_samples: int | None = None,
) -> np.ndarray:
    """Ancestral sampling of a configuration, entirely inside the subspace.

    ``denoise(z, cond, t)`` must return the predicted noise, itself in the
    subspace. Starts from a projected standard Gaussian at t = T, walks the
    posterior chain down to z_0, then draws the final configuration around
    x_hat(z_0) with standard deviation sigma_0 / alpha_0 (the width of the
    corruption kernel read as a distribution over x; zero sigma_0 would make
    this last step deterministic).

    With ``n_samples`` set, generates that many independent configurations in
    lockstep as a leading batch axis; the denoiser then receives (K, N, 3).
    """
    n = w.n_atoms
    prefix = () if n_samples is None else (n_samples,)
    z = sample_projected_gaussian(n, w, rng, shape_prefix=prefix)
    for t in range(sched.t_max, 0, -1):
        eps_hat = denoise(z, cond, t)
        x_hat = x_hat_from_eps(z, eps_hat, t, sched)
        coeff_z, coeff_x, variance = posterior_params(t, sched)
        noise = rng.standard_normal(prefix + (n, 3))
        z = project_zero_com(
            coeff_z * z + coeff_x * x_hat + np.sqrt(variance) * noise, w
        )
    eps_hat = denoise(z, cond, 0)
    x_hat = x_hat_from_eps(z, eps_hat, 0, sched)
    a0, s0 = sched.alpha[0], sched.sigma[0]
    if s0 == 0.0:
        return project_zero_com(x_hat, w)
    noise = rng.standard_normal(prefix + (n, 3))
    return project_zero_com(x_hat + (s0 / a0) * noise, w)


def training_loss(
    denoise: Callable[[np.ndarray, np.ndarray, int], np.ndarray],
    x: np.ndarray,
    cond: np.ndarray,
    w: MassWeights,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    t: int | None = None,
    eps: np.ndarray | None = None,
) -> float:
    """Single-example denoising objective: |eps - eps_hat|^2 summed over N x 3.

    Draws t uniformly over 0..T and the corruption noise from the projected
    Gaussian unless both are supplied explicitly (useful for regression tests
    that need the draws pinned).
    """
    if t is None:
        t = int(rng.integers(0, sched.t_max + 1))
    _check_t(t, sched)
    if eps is None:
        z_t, eps = corrupt(x, t, sched, w, rng)
    else:
        z_t = sched.alpha[t] * x + sched.sigma[t] * eps
    eps_hat = denoise(z_t, cond, t)
    return float(np.sum((eps - eps_hat) ** 2))
