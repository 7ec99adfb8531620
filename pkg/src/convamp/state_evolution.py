"""Scalar state evolution for the layered model.

Tracks one overlap pair per layer: m_l, the normalized correlation between
the layer's signal h_l (equivalently its pre-activation z_l) and the running
estimate, and the conjugate m_hat_l, the limit of the tilt precision A_l.
One recursion step mirrors one engine sweep exactly:

    upward for l = 1..L:
        m_hat_l = -beta_l * E[d_omega g]   over   w ~ N(0, m_l),
            z ~ N(w, tau_l - m_l), h ~ P_l(.|z), b ~ N(m_hat_(l-1) h, m_hat_(l-1))
        (y ~ output law of z at l = 1; prior expectation at l = L)
    then for every l:
        m_l <- E[h h_hat(m_hat_l, b, tau_(l+1) - m_(l+1), w)]

with every m on the right taken from the previous sweep and every m_hat from
the current one. Predicted MSE is tau_L - m_L. Only aspect ratios enter: the
recursion never sees channel counts or filter sizes, which is the
dense/convolutional equivalence in executable form.

Expectations reduce to closed forms on linear-Gaussian interfaces; ReLU
interfaces integrate over tensor grids with the kink split exactly (atom
weight plus a truncated-region rule), so doubling the node count moves
nothing at test precision. A Monte-Carlo fallback covers every kind.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .channels import (AwgnChannel, GaussBernoulliPrior, GaussianPrior,
                       ReluChannel, VAR_FLOOR, inv_mills, mills_gap)
from .network import moment_chain
from .quadrature import gauss_hermite, truncated_gauss_legendre
from .validation import check_rng

OVERLAP_SLACK = 1e-9  # m may exceed tau by at most this before it is an error


def compute_tau(network):
    """Second moment of the signal entering each layer, prior downwards."""
    for layer in network.layers[1:]:
        if not hasattr(layer.channel, "second_moment_out"):
            raise NotImplementedError(
                f"channel {type(layer.channel).__name__} has no moment propagation")
    if not hasattr(network.prior, "second_moment"):
        raise NotImplementedError(
            f"prior {type(network.prior).__name__} has no second moment")
    return network.moment_chain()[1]


@dataclass
class SeParams:
    """Everything the recursion consumes. Built from a network via
    from_network; holds no operator beyond its aspect ratio."""
    betas: list
    taus: list
    prior: object
    output_channel: object
    middle_channels: list   # entry i is the channel of interface i+2 (None padding at end)
    nodes: int = 61

    @classmethod
    def from_network(cls, network, nodes=61):
        middles = [layer.channel for layer in network.layers[1:]]
        return cls.from_parts(network.aspect_ratios(), network.prior,
                              network.output_channel, middles, nodes=nodes)

    @classmethod
    def from_parts(cls, betas, prior, output_channel, middle_channels,
                   nodes=61):
        """Build without any operator: aspect ratios are all that survives."""
        taus = moment_chain(prior, middle_channels)[1]
        return cls(betas=list(betas), taus=taus, prior=prior,
                   output_channel=output_channel,
                   middle_channels=list(middle_channels), nodes=nodes)

    def __post_init__(self):
        if len(self.betas) != len(self.taus):
            raise ValueError("betas and taus must have one entry per layer")
        if len(self.middle_channels) != len(self.betas) - 1:
            raise ValueError("need one middle channel per interior interface")
        for b in self.betas:
            if b <= 0.0:
                raise ValueError("aspect ratios must be positive")

    @property
    def depth(self):
        return len(self.betas)


@dataclass
class SeState:
    m: list
    m_hat: list
    t: int = 0

    @property
    def kappa(self):
        """Gaussian iterate variances of the theorem; equal to the overlaps
        in the Bayes-optimal regime. Read-only summaries."""
        return list(self.m)

    @property
    def kappa_hat(self):
        return list(self.m_hat)


@dataclass
class SeTrace:
    m: list = field(default_factory=list)       # per iteration: per-layer overlaps
    m_hat: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    converged: bool = False
    iterations_run: int = 0


def se_init(params):
    """Zero overlap everywhere; predicted MSE starts at the signal power."""
    L = params.depth
    return SeState(m=[0.0] * L, m_hat=[0.0] * L, t=0)


def predicted_mse(params, state):
    return max(params.taus[-1] - state.m[-1], 0.0)


# ---------------------------------------------------------------------------
# interface expectations
# ---------------------------------------------------------------------------

def _output_response(channel, tau_z, m, nodes):
    """-E[d_omega g(y, V, w)] for the observed interface."""
    V = max(tau_z - m, VAR_FLOOR)
    if isinstance(channel, AwgnChannel):
        return 1.0 / (V + channel.sigma2)
    if isinstance(channel, ReluChannel):
        x, wts = gauss_hermite(nodes)
        w = np.sqrt(max(m, 0.0)) * x
        t = -w / np.sqrt(V)
        r = inv_mills(t)
        atom_w = norm.cdf(t)
        neg = r * mills_gap(t) / V        # -eta at the y = 0 atom
        pos = 1.0 / V                     # -eta on the density part
        return float(np.sum(wts * (atom_w * neg + (1.0 - atom_w) * pos)))
    raise NotImplementedError(f"output channel {type(channel).__name__}")


def _middle_response(channel, a_tilt, tau_z, m, nodes):
    """-E[eta(a_tilt, b, V, w)] for an interior interface."""
    V = max(tau_z - m, VAR_FLOOR)
    if isinstance(channel, AwgnChannel):
        v = V + channel.sigma2
        sig = 1.0 / (a_tilt + 1.0 / v)
        return (v - sig) / v**2
    if isinstance(channel, ReluChannel):
        x, wts = gauss_hermite(nodes)
        w = np.sqrt(max(m, 0.0)) * x                      # (nw,)
        sqV = np.sqrt(V)
        xi = np.sqrt(max(a_tilt, VAR_FLOOR)) * x          # b noise (nx,)
        # z <= 0: h = 0, b is pure noise
        out = channel.middle_denoise(a_tilt, xi[None, :], V, w[:, None])
        neg = -np.sum(wts * out.eta, axis=1)              # (nw,)
        atom_w = norm.cdf(-w / sqV)
        # z > 0: b = a_tilt z + noise, truncated Gaussian in z
        u, uw = truncated_gauss_legendre(nodes, -w / sqV)  # (nw, nu)
        z = w[:, None] + sqV * u
        b = a_tilt * z[:, :, None] + xi[None, None, :]
        out = channel.middle_denoise(a_tilt, b, V, w[:, None, None])
        pos = -np.sum(uw[:, :, None] * wts * out.eta, axis=(1, 2))
        return float(np.sum(wts * (atom_w * neg + pos)))
    raise NotImplementedError(f"middle channel {type(channel).__name__}")


def _prior_overlap(prior, m_hat, nodes):
    """E[x h_hat(m_hat, b)] with b ~ N(m_hat x, m_hat).

    For the spike-and-slab prior the x-average collapses by Gaussian
    conditioning to E[b h_hat(b)] / (m_hat + 1) over the slab-conditioned
    b ~ N(0, m_hat (m_hat + 1)), then integrates adaptively: the slab weight
    switches over a band that narrows like sqrt(log(m_hat) / m_hat), which
    fixed Hermite grids stop resolving once m_hat is large.
    """
    if isinstance(prior, GaussianPrior):
        a = m_hat + 1.0 / prior.var
        return (m_hat * prior.second_moment() + prior.mu**2 / prior.var) / a
    if isinstance(prior, GaussBernoulliPrior):
        rho = prior.rho
        if rho == 0.0 or m_hat <= 0.0:
            return 0.0
        a = m_hat + 1.0
        if rho >= 1.0:
            return m_hat / a
        sd = np.sqrt(m_hat * a)

        def f(b):
            return b * float(prior.denoise(m_hat, b)[0]) * norm.pdf(b, scale=sd)

        b_star2 = a * np.log(a) - 2.0 * a * np.log(rho / (1.0 - rho))
        pts = sorted({-np.sqrt(b_star2), np.sqrt(b_star2)}) if b_star2 > 0 else None
        span = 9.0 * sd
        if pts is not None:
            pts = [p for p in pts if -span < p < span] or None
        val, err = integrate.quad(f, -span, span, points=pts,
                                  epsabs=1e-13, epsrel=1e-11, limit=300)
        if not np.isfinite(val):
            raise RuntimeError("prior overlap quadrature failed")
        return rho * val / a
    raise NotImplementedError(f"prior {type(prior).__name__}")


def _middle_overlap(channel, a_tilt, tau_z, m_z, nodes):
    """E[h h_hat(a_tilt, b, V, w)] for an interior interface, where the
    signal h = phi(z) rides on z ~ N(w, tau_z - m_z), w ~ N(0, m_z)."""
    V = max(tau_z - m_z, VAR_FLOOR)
    if isinstance(channel, AwgnChannel):
        v = V + channel.sigma2
        tau_h = tau_z + channel.sigma2
        return (a_tilt * tau_h + m_z / v) / (a_tilt + 1.0 / v)
    if isinstance(channel, ReluChannel):
        x, wts = gauss_hermite(nodes)
        w = np.sqrt(max(m_z, 0.0)) * x
        sqV = np.sqrt(V)
        xi = np.sqrt(max(a_tilt, VAR_FLOOR)) * x
        u, uw = truncated_gauss_legendre(nodes, -w / sqV)
        z = w[:, None] + sqV * u                          # h = z there
        b = a_tilt * z[:, :, None] + xi[None, None, :]
        out = channel.middle_denoise(a_tilt, b, V, w[:, None, None])
        inner = np.sum(uw[:, :, None] * wts * z[:, :, None] * out.h_hat,
                       axis=(1, 2))
        return float(np.sum(wts * inner))
    raise NotImplementedError(f"middle channel {type(channel).__name__}")


def se_step(state, params):
    """One sweep of the recursion; returns the next state."""
    L = params.depth
    m_prev = state.m
    m_hat = [0.0] * L
    for i in range(L):
        if i == 0:
            resp = _output_response(params.output_channel, params.taus[0],
                                    m_prev[0], params.nodes)
        else:
            resp = _middle_response(params.middle_channels[i - 1], m_hat[i - 1],
                                    params.taus[i], m_prev[i], params.nodes)
        m_hat[i] = max(params.betas[i] * resp, 0.0)
    m_new = [0.0] * L
    for i in range(L):
        if i == L - 1:
            val = _prior_overlap(params.prior, m_hat[i], params.nodes)
        else:
            val = _middle_overlap(params.middle_channels[i], m_hat[i],
                                  params.taus[i + 1], m_prev[i + 1],
                                  params.nodes)
        if val > params.taus[i] + OVERLAP_SLACK:
            raise RuntimeError(
                f"overlap {val} exceeds signal power {params.taus[i]} "
                f"at layer {i + 1}: invariant breach")
        m_new[i] = min(max(val, 0.0), params.taus[i])
    return SeState(m=m_new, m_hat=m_hat, t=state.t + 1)


def se_run(params, max_iter=200, tol=1e-10):
    """Iterate to a fixed point (max |delta m| < tol over layers)."""
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    state = se_init(params)
    trace = SeTrace()
    trace.m.append(list(state.m))
    trace.m_hat.append(list(state.m_hat))
    trace.mse.append(predicted_mse(params, state))
    for _ in range(max_iter):
        new = se_step(state, params)
        trace.m.append(list(new.m))
        trace.m_hat.append(list(new.m_hat))
        trace.mse.append(predicted_mse(params, new))
        delta = max(abs(a - b) for a, b in zip(new.m, state.m))
        state = new
        if delta < tol:
            trace.converged = True
            break
    trace.iterations_run = state.t
    return trace


# ---------------------------------------------------------------------------
# Monte-Carlo fallback for the interface expectations
# ---------------------------------------------------------------------------

def se_step_mc(state, params, n_samples=1_000_000, rng=None):
    """se_step with every expectation replaced by Monte-Carlo sampling.
    Validation tool: slow, noisy (O(n^-1/2)), but assumption-free."""
    rng = check_rng(rng)
    L = params.depth
    m_prev = state.m

    def z_side(i):
        m = m_prev[i]
        V = max(params.taus[i] - m, VAR_FLOOR)
        w = np.sqrt(max(m, 0.0)) * rng.standard_normal(n_samples)
        z = w + np.sqrt(V) * rng.standard_normal(n_samples)
        return w, z, V

    m_hat = [0.0] * L
    for i in range(L):
        w, z, V = z_side(i)
        if i == 0:
            y = params.output_channel.sample(z, rng)
            _, eta = params.output_channel.output_denoise(y, V, w)
        else:
            ch = params.middle_channels[i - 1]
            h = ch.sample(z, rng)
            a = max(m_hat[i - 1], VAR_FLOOR)
            b = a * h + np.sqrt(a) * rng.standard_normal(n_samples)
            eta = ch.middle_denoise(a, b, V, w).eta
        m_hat[i] = max(-params.betas[i] * float(np.mean(eta)), 0.0)
    m_new = [0.0] * L
    for i in range(L):
        a = max(m_hat[i], VAR_FLOOR)
        if i == L - 1:
            x = params.prior.sample(n_samples, rng)
            b = a * x + np.sqrt(a) * rng.standard_normal(n_samples)
            h_hat, _ = params.prior.denoise(a, b)
            val = float(np.mean(x * h_hat))
        else:
            ch = params.middle_channels[i]
            w, z, V = z_side(i + 1)
            h = ch.sample(z, rng)
            b = a * h + np.sqrt(a) * rng.standard_normal(n_samples)
            h_hat = ch.middle_denoise(a, b, V, w).h_hat
            val = float(np.mean(h * h_hat))
        m_new[i] = min(max(val, 0.0), params.taus[i])
    return SeState(m=m_new, m_hat=m_hat, t=state.t + 1)
