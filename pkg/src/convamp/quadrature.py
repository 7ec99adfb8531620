"""Numerical integration: validation oracles and fixed-node Gaussian rules.

The adaptive oracles integrate the partition functions from their
definitions and exist to gate the closed-form denoisers; they are slow and
meant for tests. The fixed-node helpers (Gauss-Hermite for full-line
standard-normal expectations, Gauss-Legendre against a Gaussian weight for
truncated regions) back the state-evolution expectations.
"""

import warnings

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.stats import norm

from .channels import AwgnChannel, GaussBernoulliPrior, GaussianPrior, ReluChannel

GAUSS_TAIL = 9.0  # standard-normal mass beyond 9 sigma is ~1e-19


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested accuracy."""


def _quad(f, a, b, points=None):
    # relative control: partition-function values can sit deep in Gaussian
    # tails where any fixed absolute tolerance swamps them. scipy's roundoff
    # chatter is silenced; the explicit error-estimate gate below governs.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, points=points, epsabs=1e-280,
                                  epsrel=1e-10, limit=400)
    if not np.isfinite(val) or err > 1e-5 * abs(val) + 1e-280:
        raise QuadratureError(
            f"quad on [{a}, {b}] returned {val} with error estimate {err}")
    return val


def prior_log_partition_quad(prior, A, B):
    """log int P_X(h) exp(B h - A h^2 / 2) dh by adaptive quadrature."""
    if isinstance(prior, GaussianPrior):
        c = prior.mu
        w = np.sqrt(prior.var)
        lo, hi = c - GAUSS_TAIL * w - abs(B) * w**2, c + GAUSS_TAIL * w + abs(B) * w**2

        def f(h):
            return norm.pdf(h, loc=prior.mu, scale=w) * np.exp(B * h - 0.5 * A * h**2)

        return np.log(_quad(f, lo, hi, points=[c]))
    if isinstance(prior, GaussBernoulliPrior):
        lo, hi = -GAUSS_TAIL - abs(B), GAUSS_TAIL + abs(B)

        def f(h):
            return norm.pdf(h) * np.exp(B * h - 0.5 * A * h**2)

        slab = _quad(f, lo, hi, points=[0.0])
        return np.log((1.0 - prior.rho) + prior.rho * slab)
    raise TypeError(f"unsupported prior {type(prior).__name__}")


def output_log_partition_quad(channel, y, V, omega, smoothing=1e-6):
    """log of (2 pi V)^{-1/2} int P(y|z) exp(-(z-omega)^2/(2V)) dz.

    For the relu channel the delta kernel is smoothed to N(y; max(z,0),
    smoothing^2); at y == 0 the result differs from the atom weight by the
    constant -log(sqrt(2 pi) * smoothing), which drops out of every
    derivative, so callers comparing values (not derivatives) must add it
    back.
    """
    sv = np.sqrt(V)
    lo, hi = omega - GAUSS_TAIL * sv, omega + GAUSS_TAIL * sv
    if isinstance(channel, AwgnChannel):
        if channel.sigma2 == 0.0:
            return float(channel.log_partition_output(y, V, omega))
        w = np.sqrt(channel.sigma2)

        def f(z):
            return norm.pdf(y, loc=z, scale=w) * norm.pdf(z, loc=omega, scale=sv)

        # the mass sits between omega and y, around the precision-weighted mean
        z_star = (omega / V + y / channel.sigma2) / (1.0 / V + 1.0 / channel.sigma2)
        return np.log(_quad(f, min(lo, y - GAUSS_TAIL * w),
                            max(hi, y + GAUSS_TAIL * w),
                            points=[omega, y, z_star]))
    if isinstance(channel, ReluChannel):
        # Z = E_z[N(y; max(z,0), eps^2)]; split exactly at the kink, then
        # integrate the spike region in units of eps so the adaptive rule
        # sees an O(1)-width integrand.
        eps = smoothing
        atom = norm.pdf(y, scale=eps) * norm.cdf(-omega / sv)

        def f(u):
            z = y + eps * u
            return norm.pdf(u) * norm.pdf(z, loc=omega, scale=sv) \
                * (z > 0.0)

        lo_u = max(-GAUSS_TAIL, -y / eps)
        pos = _quad(f, lo_u, GAUSS_TAIL) if lo_u < GAUSS_TAIL else 0.0
        return np.log(atom + pos)
    raise TypeError(f"unsupported channel {type(channel).__name__}")


def middle_log_partition_quad(channel, A, B, V, omega):
    """log Z for a middle interface by 1-d adaptive quadrature.

    For the awgn channel the z-integral is first removed with the elementary
    Gaussian convolution N(h; z, s) * N(z; omega, V) -> N(h; omega, V + s);
    that reduction itself is cross-checked against the raw 2-d definition in
    middle_log_partition_quad2d. The relu h-integral collapses on the delta.
    """
    sv = np.sqrt(V)
    span = GAUSS_TAIL + abs(B) * (sv + 1.0)
    if isinstance(channel, AwgnChannel):
        w = np.sqrt(V + channel.sigma2)

        def f(h):
            return norm.pdf(h, loc=omega, scale=w) * np.exp(B * h - 0.5 * A * h**2)

        lo = omega - w * (GAUSS_TAIL + abs(B) * w)
        hi = omega + w * (GAUSS_TAIL + abs(B) * w)
        return np.log(_quad(f, lo, hi, points=[omega]))
    if isinstance(channel, ReluChannel):
        def f(xi):
            z = omega + sv * xi
            h = np.maximum(z, 0.0)
            return norm.pdf(xi) * np.exp(B * h - 0.5 * A * h**2)

        kink = -omega / sv
        pts = [kink] if -span < kink < span else None
        return np.log(_quad(f, -span, span, points=pts))
    raise TypeError(f"unsupported channel {type(channel).__name__}")


def middle_log_partition_quad2d(channel, A, B, V, omega):
    """As middle_log_partition_quad for awgn, but integrating the raw 2-d
    definition with dblquad. Slow; used to validate the 1-d reduction."""
    if not isinstance(channel, AwgnChannel) or channel.sigma2 == 0.0:
        raise TypeError("2-d form only applies to noisy awgn channels")
    sv, w = np.sqrt(V), np.sqrt(channel.sigma2)
    span = GAUSS_TAIL + abs(B) * (sv + 1.0)
    hspan = span + abs(B) * w

    def f2(zeta, xi):
        h = omega + sv * xi + w * zeta
        return norm.pdf(xi) * norm.pdf(zeta) * np.exp(B * h - 0.5 * A * h**2)

    val, err = integrate.dblquad(f2, -span, span, -hspan, hspan,
                                 epsabs=1e-11, epsrel=1e-9)
    if not np.isfinite(val) or err > max(1e-7, 1e-6 * abs(val)):
        raise QuadratureError(f"dblquad returned {val} (error {err})")
    return np.log(val)


def log_partition_quad(obj, *args):
    """Dispatching oracle: (prior, A, B), (channel, A, B, V, omega) for a
    middle interface, or (channel, y, V, omega) with output=True."""
    if isinstance(obj, (GaussianPrior, GaussBernoulliPrior)):
        return prior_log_partition_quad(obj, *args)
    if len(args) == 4:
        return middle_log_partition_quad(obj, *args)
    if len(args) == 3:
        return output_log_partition_quad(obj, *args)
    raise TypeError("expected (A, B), (A, B, V, omega) or (y, V, omega) arguments")


# ---------------------------------------------------------------------------
# fixed-node rules
# ---------------------------------------------------------------------------

def gauss_hermite(n):
    """Nodes/weights (x, w) with sum w_i f(x_i) ~ E[f(Z)], Z standard normal."""
    x, w = hermgauss(int(n))
    return np.sqrt(2.0) * x, w / np.sqrt(np.pi)


def truncated_gauss_legendre(n, lower):
    """Nodes/weights for int_lower^inf phi(u) f(u) du, tails cut at 9 sigma.

    `lower` may be an array; nodes/weights gain a trailing axis of size n and
    weights include the Gaussian density factor (zero when the region is
    empty).
    """
    lo = np.clip(np.asarray(lower, dtype=np.float64), -GAUSS_TAIL, GAUSS_TAIL)
    hi = GAUSS_TAIL
    x, w = leggauss(int(n))
    half = 0.5 * (hi - lo)
    u = half[..., None] * x + (0.5 * (hi + lo))[..., None]
    return u, half[..., None] * w * norm.pdf(u)
