"""Scalar priors and channels with their Bayes-optimal denoisers.

Every layer interface carries a partition function

    Z(A, B, V, omega) = (2 pi V)^{-1/2} int P(h|z)
                        exp(B h - A h^2 / 2 - (z - omega)^2 / (2 V)) dh dz

whose log-derivatives give the four denoised quantities used by the
message-passing engine: h_hat = d_B log Z, sigma = d_B h_hat,
g = d_omega log Z, eta = d_omega g. The output interface drops the (A, B)
tilt (y is observed); the prior interface drops (V, omega).

The closed forms below are derived from these definitions and are gated in
the test suite against adaptive quadrature of Z itself.

Channel noise kernels include their Gaussian normalizer, so P(h|z) is a
probability kernel; this shifts log Z by a constant and no denoiser.
"""

from typing import NamedTuple

import numpy as np
from scipy.special import erfcx, expit, log_ndtr

VAR_FLOOR = 1e-11  # variances are floored here before any division

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _floor_var(v, name):
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0.0):
        raise ValueError(f"{name} must be positive")
    return np.maximum(v, VAR_FLOOR)


def _check_nonneg(a, name):
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0.0):
        raise ValueError(f"{name} must be nonnegative")
    return a


def inv_mills(s):
    """phi(s) / Phi(s), stable over the whole real line."""
    s = np.asarray(s, dtype=np.float64)
    return np.sqrt(2.0 / np.pi) / erfcx(-s / np.sqrt(2.0))


# The truncated-Gaussian mean and variance factors below suffer catastrophic
# cancellation for s << 0 (mass far outside the kept region), where the naive
# expressions subtract O(s^2) terms to produce O(s^-2); both switch to their
# asymptotic series there.
_TRUNC_ASYMPT = -25.0


def mills_gap(s):
    """s + phi(s)/Phi(s); the mean of a standard normal truncated to
    (0, inf) with standardized threshold -s, shifted by s."""
    s = np.asarray(s, dtype=np.float64)
    safe = np.where(s > _TRUNC_ASYMPT, s, 0.0)
    direct = safe + inv_mills(safe)
    tail = np.where(s <= _TRUNC_ASYMPT, s, 1.0)
    a = 1.0 / tail**2
    series = -(1.0 / tail) * (1.0 - 2.0 * a + 10.0 * a**2 - 74.0 * a**3)
    return np.where(s > _TRUNC_ASYMPT, direct, series)


def trunc_var_factor(s):
    """1 - s R(s) - R(s)^2 with R the inverse Mills ratio; the variance of a
    standard normal truncated to values above -s, as a fraction of 1."""
    s = np.asarray(s, dtype=np.float64)
    safe = np.where(s > _TRUNC_ASYMPT, s, 0.0)
    r = inv_mills(safe)
    direct = 1.0 - safe * r - r**2
    a = 1.0 / np.where(s <= _TRUNC_ASYMPT, s, 1.0) ** 2
    series = a * (1.0 - 6.0 * a + 50.0 * a**2 - 518.0 * a**3)
    return np.maximum(np.where(s > _TRUNC_ASYMPT, direct, series), 0.0)


class DenoiserOutput(NamedTuple):
    h_hat: np.ndarray
    sigma: np.ndarray
    g: np.ndarray
    eta: np.ndarray


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

class GaussianPrior:
    """N(mean, var) prior."""

    kind = "gaussian"

    def __init__(self, mean=0.0, var=1.0):
        if var <= 0.0:
            raise ValueError("var must be positive")
        self.mu = float(mean)
        self.var = float(var)

    def sample(self, n, rng):
        return self.mu + np.sqrt(self.var) * rng.standard_normal(n)

    def mean(self):
        return self.mu

    def second_moment(self):
        return self.mu**2 + self.var

    def variance(self):
        return self.var

    def denoise(self, A, B):
        A = _check_nonneg(A, "A")
        a = A + 1.0 / self.var
        h_hat = (np.asarray(B, dtype=np.float64) + self.mu / self.var) / a
        sigma = np.broadcast_to(1.0 / a, h_hat.shape).copy()
        return h_hat, sigma

    def log_partition(self, A, B):
        A = _check_nonneg(A, "A")
        B = np.asarray(B, dtype=np.float64)
        a = A + 1.0 / self.var
        b = B + self.mu / self.var
        return -0.5 * np.log(self.var * a) + b**2 / (2.0 * a) \
            - self.mu**2 / (2.0 * self.var)

    def to_config(self):
        return {"type": "gaussian", "mean": self.mu, "var": self.var}


class GaussBernoulliPrior:
    """Sparse prior rho * N(0, 1) + (1 - rho) * delta_0."""

    kind = "gauss_bernoulli"

    def __init__(self, rho):
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        self.rho = float(rho)

    def sample(self, n, rng):
        mask = rng.random(n) < self.rho
        return np.where(mask, rng.standard_normal(n), 0.0)

    def mean(self):
        return 0.0

    def second_moment(self):
        return self.rho

    def variance(self):
        return self.rho

    def _slab_weight(self, A, B):
        # log odds of the slab vs the spike, combined through a sigmoid
        a = A + 1.0
        log_slab = B**2 / (2.0 * a) - 0.5 * np.log(a)
        if self.rho >= 1.0:
            return np.ones_like(log_slab)
        if self.rho <= 0.0:
            return np.zeros_like(log_slab)
        return expit(np.log(self.rho / (1.0 - self.rho)) + log_slab)

    def denoise(self, A, B):
        A = _check_nonneg(A, "A")
        B = np.asarray(B, dtype=np.float64)
        a = A + 1.0
        m_slab = B / a
        w = self._slab_weight(A, B)
        h_hat = w * m_slab
        sigma = w / a + w * (1.0 - w) * m_slab**2
        return h_hat, sigma

    def log_partition(self, A, B):
        A = _check_nonneg(A, "A")
        B = np.asarray(B, dtype=np.float64)
        a = A + 1.0
        log_slab = B**2 / (2.0 * a) - 0.5 * np.log(a)
        if self.rho >= 1.0:
            return log_slab
        if self.rho <= 0.0:
            return np.zeros_like(log_slab)
        return np.logaddexp(np.log1p(-self.rho), np.log(self.rho) + log_slab)

    def to_config(self):
        return {"type": "gauss_bernoulli", "rho": self.rho}


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

class AwgnChannel:
    """h = z + sqrt(sigma2) * noise; sigma2 = 0 collapses to the identity."""

    kind = "awgn"

    def __init__(self, sigma2):
        if sigma2 < 0.0:
            raise ValueError("sigma2 must be nonnegative")
        self.sigma2 = float(sigma2)

    def sample(self, z, rng):
        z = np.asarray(z, dtype=np.float64)
        if self.sigma2 == 0.0:
            return z.copy()
        return z + np.sqrt(self.sigma2) * rng.standard_normal(z.shape)

    def mean_out(self, tau_z):
        return 0.0

    def second_moment_out(self, tau_z):
        return tau_z + self.sigma2

    def output_denoise(self, y, V, omega):
        V = _floor_var(V, "V")
        v = V + self.sigma2
        g = (np.asarray(y, dtype=np.float64) - omega) / v
        eta = np.broadcast_to(-1.0 / v, g.shape).copy()
        return g, eta

    def log_partition_output(self, y, V, omega):
        V = _floor_var(V, "V")
        v = V + self.sigma2
        y = np.asarray(y, dtype=np.float64)
        return -((y - omega) ** 2) / (2.0 * v) - 0.5 * np.log(2.0 * np.pi * v)

    def middle_denoise(self, A, B, V, omega):
        A = _check_nonneg(A, "A")
        V = _floor_var(V, "V")
        omega = np.asarray(omega, dtype=np.float64)
        v = V + self.sigma2
        a = A + 1.0 / v
        h_hat = (np.asarray(B, dtype=np.float64) + omega / v) / a
        sigma = np.broadcast_to(1.0 / a, h_hat.shape).copy()
        g = (h_hat - omega) / v
        eta = (sigma - v) / v**2
        h_hat, sigma, g, eta = np.broadcast_arrays(h_hat, sigma, g, eta)
        return DenoiserOutput(h_hat, sigma, g, eta)

    def log_partition_middle(self, A, B, V, omega):
        A = _check_nonneg(A, "A")
        V = _floor_var(V, "V")
        omega = np.asarray(omega, dtype=np.float64)
        v = V + self.sigma2
        a = A + 1.0 / v
        b = np.asarray(B, dtype=np.float64) + omega / v
        return -0.5 * np.log(v * a) + b**2 / (2.0 * a) - omega**2 / (2.0 * v)

    def to_config(self):
        return {"type": "awgn", "sigma2": self.sigma2}


class IdentityChannel(AwgnChannel):
    """Noiseless pass-through, the sigma2 -> 0 limit taken analytically."""

    kind = "identity"

    def __init__(self):
        super().__init__(0.0)

    def to_config(self):
        return {"type": "identity"}


class ReluChannel:
    """h = max(z, 0).

    The middle-layer posterior splits into a z <= 0 part (h pinned at 0,
    plain truncated Gaussian in z) and a z > 0 part (tilted truncated
    Gaussian); both reduce to inverse-Mills expressions. The output law has
    an atom at y = 0 carrying all of z <= 0, dispatched on y == 0 exactly.
    """

    kind = "relu"

    def sample(self, z, rng):
        return np.maximum(np.asarray(z, dtype=np.float64), 0.0)

    def mean_out(self, tau_z):
        return np.sqrt(tau_z / (2.0 * np.pi))

    def second_moment_out(self, tau_z):
        return tau_z / 2.0

    def output_denoise(self, y, V, omega):
        y = np.asarray(y, dtype=np.float64)
        if np.any(y < 0.0):
            raise ValueError("relu observations must be nonnegative")
        V = _floor_var(V, "V")
        y, v, omega = np.broadcast_arrays(y, V, np.asarray(omega, dtype=np.float64))
        t = -omega / np.sqrt(v)
        r = inv_mills(t)
        atom = y == 0.0
        g = np.where(atom, -r / np.sqrt(v), (y - omega) / v)
        eta = np.where(atom, -(r * mills_gap(t)) / v, -1.0 / v)
        return g, eta

    def log_partition_output(self, y, V, omega):
        y = np.asarray(y, dtype=np.float64)
        if np.any(y < 0.0):
            raise ValueError("relu observations must be nonnegative")
        V = _floor_var(V, "V")
        omega = np.asarray(omega, dtype=np.float64)
        dens = -((y - omega) ** 2) / (2.0 * V) - 0.5 * np.log(2.0 * np.pi * V)
        atom = log_ndtr(-omega / np.sqrt(V))
        return np.where(y == 0.0, atom, dens)

    def middle_denoise(self, A, B, V, omega):
        A = _check_nonneg(A, "A")
        V = _floor_var(V, "V")
        B = np.asarray(B, dtype=np.float64)
        omega = np.asarray(omega, dtype=np.float64)
        A, B, V, omega = np.broadcast_arrays(A, B, V, omega)

        sqV = np.sqrt(V)
        a_bar = A + 1.0 / V
        b_bar = B + omega / V
        s = b_bar / np.sqrt(a_bar)
        t = -omega / sqV

        log_zneg = log_ndtr(t)
        log_zpos = (-0.5 * np.log(V * a_bar) + b_bar**2 / (2.0 * a_bar)
                    - omega**2 / (2.0 * V) + log_ndtr(s))
        w_pos = expit(log_zpos - log_zneg)
        w_neg = 1.0 - w_pos

        m_pos = mills_gap(s) / np.sqrt(a_bar)                # E[z | z > 0]
        var_pos = trunc_var_factor(s) / a_bar
        d_neg = -sqV * inv_mills(t)                          # E[z | z <= 0] - omega
        var_neg = V * trunc_var_factor(t)

        h_hat = w_pos * m_pos
        sigma = w_pos * var_pos + w_pos * (1.0 - w_pos) * m_pos**2

        # two-component mixture of truncated Gaussians, means relative to omega
        d_pos = m_pos - omega
        z_shift = w_neg * d_neg + w_pos * d_pos              # E[z] - omega
        z_var = (w_neg * var_neg + w_pos * var_pos
                 + w_neg * w_pos * (d_neg - d_pos) ** 2)
        g = z_shift / V
        eta = (z_var - V) / V**2
        return DenoiserOutput(h_hat, sigma, g, eta)

    def log_partition_middle(self, A, B, V, omega):
        A = _check_nonneg(A, "A")
        V = _floor_var(V, "V")
        B = np.asarray(B, dtype=np.float64)
        omega = np.asarray(omega, dtype=np.float64)
        a_bar = A + 1.0 / V
        b_bar = B + omega / V
        log_zneg = log_ndtr(-omega / np.sqrt(V))
        log_zpos = (-0.5 * np.log(V * a_bar) + b_bar**2 / (2.0 * a_bar)
                    - omega**2 / (2.0 * V) + log_ndtr(b_bar / np.sqrt(a_bar)))
        return np.logaddexp(log_zneg, log_zpos)

    def to_config(self):
        return {"type": "relu"}


PRIOR_TYPES = {"gaussian": GaussianPrior, "gauss_bernoulli": GaussBernoulliPrior}
CHANNEL_TYPES = {"awgn": AwgnChannel, "identity": IdentityChannel, "relu": ReluChannel}


def prior_from_config(spec):
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind == "gaussian":
        unknown = set(spec) - {"mean", "var"}
        if unknown:
            raise ValueError(f"unknown gaussian prior fields: {sorted(unknown)}")
        return GaussianPrior(spec.get("mean", 0.0), spec.get("var", 1.0))
    if kind == "gauss_bernoulli":
        unknown = set(spec) - {"rho"}
        if unknown:
            raise ValueError(f"unknown gauss_bernoulli fields: {sorted(unknown)}")
        if "rho" not in spec:
            raise ValueError("gauss_bernoulli prior requires rho")
        return GaussBernoulliPrior(spec["rho"])
    raise ValueError(f"unknown prior type {kind!r}")


def channel_from_config(spec):
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind == "awgn":
        unknown = set(spec) - {"sigma2"}
        if unknown:
            raise ValueError(f"unknown awgn fields: {sorted(unknown)}")
        if "sigma2" not in spec:
            raise ValueError("awgn channel requires sigma2")
        return AwgnChannel(spec["sigma2"])
    if kind == "identity":
        if spec:
            raise ValueError(f"unknown identity fields: {sorted(spec)}")
        return IdentityChannel()
    if kind == "relu":
        if spec:
            raise ValueError(f"unknown relu fields: {sorted(spec)}")
        return ReluChannel()
    raise ValueError(f"unknown channel type {kind!r}")
