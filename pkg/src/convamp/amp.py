"""Multi-layer AMP engine.

One sweep updates, for every layer l (upward, observation side first),

    V_l     = (W_l o W_l) sigma_l
    omega_l = W_l h_hat_l - V_l * g_l(previous sweep)        # Onsager
    g_l     = d_omega log Z_l,   eta_l = d_omega g_l          # fresh (V, omega)
    A_l     = -(W_l o W_l)^T eta_l
    B_l     = W_l^T g_l + A_l * h_hat_l                       # Onsager
    h_hat_l = d_B log Z_(l+1),   sigma_l = d_B h_hat_l        # fresh (A, B)

with the observed y replacing the (A, B) tilt at l=1 and the prior replacing
the (V, omega) side at l=L. The sweep for g consumes the same-sweep
(A_(l-1), B_(l-1)), which forces the upward order.

Iterations start from the deterministic zero-information state (estimates at
the prior-predictive mean, variances at the signal power), the state the
scalar state evolution recursion is initialized from; a sampled start in the
style of randomized implementations is available via init="sample".
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .channels import VAR_FLOOR
from .network import generate_instance
from .validation import check_rng, check_vector


class AmpDivergedError(RuntimeError):
    def __init__(self, iteration):
        super().__init__(f"AMP produced non-finite values at iteration {iteration}")
        self.iteration = iteration


@dataclass
class AmpState:
    """Per-layer Gaussian-approximation parameters after `t` sweeps."""
    h_hat: list
    sigma: list
    g: list
    V: list
    omega: list
    A: list
    B: list
    t: int = 0

    @property
    def x_hat(self):
        return self.h_hat[-1]


@dataclass
class AmpTrace:
    mse: list = field(default_factory=list)       # per iteration, incl. t=0
    mean_V: list = field(default_factory=list)    # per iteration: per-layer means
    mean_A: list = field(default_factory=list)
    converged: bool = False
    iterations_run: int = 0


def mse(x_hat, x0):
    """Mean squared error (1/n) sum (x_hat - x0)^2."""
    x_hat = check_vector(x_hat, None, "x_hat")
    x0 = check_vector(x0, len(x_hat), "x0")
    return float(np.mean((x_hat - x0) ** 2))


def init_amp(network, y=None, rng=None, init="deterministic"):
    """Starting state.

    "deterministic" zeroes every estimate and sets its uncertainty to the
    signal power tau_l, the exact zero-overlap state the state evolution
    recursion starts from (overlaps 0, V_l = Var(omega marginal) = tau_l
    analytically). "sample" instead draws B_l and omega_l from the
    signal-model marginals of a fresh instance with A_l = 1/Var(h_l),
    V_l = Var(z_l), and reads the first estimates off those parameters.
    """
    L = network.depth
    mean, tau = network.moment_chain()
    rows = [layer.operator.shape[0] for layer in network.layers]
    cols = [layer.operator.shape[1] for layer in network.layers]
    var = [max(tau[i] - mean[i] ** 2, VAR_FLOOR) for i in range(L)]
    state = AmpState(
        h_hat=[np.zeros(cols[i]) for i in range(L)],
        sigma=[np.full(cols[i], max(tau[i], VAR_FLOOR)) for i in range(L)],
        g=[np.zeros(rows[i]) for i in range(L)],
        V=[np.full(rows[i], max(tau[i], VAR_FLOOR)) for i in range(L)],
        omega=[np.zeros(rows[i]) for i in range(L)],
        A=[np.zeros(cols[i]) for i in range(L)],
        B=[np.zeros(cols[i]) for i in range(L)],
        t=0,
    )
    if init == "deterministic":
        return state
    if init != "sample":
        raise ValueError(f"unknown init {init!r}")
    truth = generate_instance(network, check_rng(rng))
    for i in range(L):
        state.omega[i] = truth.z[i].copy()
        state.B[i] = truth.signal_for_layer(i).copy()
        state.A[i] = np.full(cols[i], 1.0 / var[i])
    for i in range(L):
        if i == L - 1:
            h, s = network.prior.denoise(state.A[i], state.B[i])
        else:
            out = network.layers[i + 1].channel.middle_denoise(
                state.A[i], state.B[i], state.V[i + 1], state.omega[i + 1])
            h, s = out.h_hat, out.sigma
        state.h_hat[i], state.sigma[i] = h, np.maximum(s, VAR_FLOOR)
    return state


def amp_step(state, network, y, damping=0.0):
    """One full sweep; returns the next state."""
    L = network.depth
    y = check_vector(y, network.n_obs, "y")
    t = state.t + 1

    V, omega = [None] * L, [None] * L
    for i in range(L):
        op = network.layers[i].operator
        V[i] = np.maximum(op.sq_matvec(state.sigma[i]), VAR_FLOOR)
        omega[i] = op.matvec(state.h_hat[i]) - V[i] * state.g[i]

    g, A, B = [None] * L, [None] * L, [None] * L
    for i in range(L):
        op = network.layers[i].operator
        if i == 0:
            g_i, eta_i = network.output_channel.output_denoise(y, V[0], omega[0])
        else:
            out = network.layers[i].channel.middle_denoise(
                A[i - 1], B[i - 1], V[i], omega[i])
            g_i, eta_i = out.g, out.eta
        if damping > 0.0:
            g_i = (1.0 - damping) * g_i + damping * state.g[i]
        g[i] = g_i
        A[i] = np.maximum(-op.sq_rmatvec(eta_i), VAR_FLOOR)
        B[i] = op.rmatvec(g_i) + A[i] * state.h_hat[i]

    h_hat, sigma = [None] * L, [None] * L
    for i in range(L):
        if i == L - 1:
            h_i, s_i = network.prior.denoise(A[i], B[i])
        else:
            out = network.layers[i + 1].channel.middle_denoise(
                A[i], B[i], V[i + 1], omega[i + 1])
            h_i, s_i = out.h_hat, out.sigma
        if damping > 0.0:
            h_i = (1.0 - damping) * h_i + damping * state.h_hat[i]
        h_hat[i] = h_i
        sigma[i] = np.maximum(s_i, VAR_FLOOR)

    for arrs in (omega, B, h_hat):
        for arr in arrs:
            if not np.all(np.isfinite(arr)):
                raise AmpDivergedError(t)
    return AmpState(h_hat=h_hat, sigma=sigma, g=g, V=V, omega=omega,
                    A=A, B=B, t=t)


def run_amp(network, y, max_iter=200, tol=1e-8, damping=0.0, x0=None,
            init="deterministic", rng=None):
    """Iterate to convergence (relative L2 change of x_hat below tol).

    Returns (x_hat, AmpTrace). When x0 is provided the trace records the
    per-iteration MSE, including the iteration-0 (zero-information) point.

    damping="auto" runs undamped (so the tracked phase follows the bare
    dynamics exactly) and engages blending only when the iterate change
    starts growing again, the finite-size signature of a late-stage
    reversal; small instances of deep nets occasionally need this to stay
    finite.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    auto = damping == "auto"
    d_run = 0.0 if auto else float(damping)
    if not 0.0 <= d_run < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    state = init_amp(network, y=y, rng=rng, init=init)
    trace = AmpTrace()

    def record(st):
        if x0 is not None:
            trace.mse.append(mse(st.x_hat, x0))
        trace.mean_V.append([float(np.mean(v)) for v in st.V])
        trace.mean_A.append([float(np.mean(a)) for a in st.A])

    record(state)
    delta_min = np.inf
    prev_delta = np.inf
    for _ in range(max_iter):
        prev = state.x_hat
        state = amp_step(state, network, y, damping=d_run)
        record(state)
        delta = np.linalg.norm(state.x_hat - prev)
        scale = max(np.linalg.norm(state.x_hat), 1e-12)
        if delta / scale < tol:
            trace.converged = True
            break
        if auto:
            if delta > max(3.0 * delta_min, 1e-12) and delta > prev_delta:
                d_run = max(d_run, 0.5)
            prev_delta = delta
            delta_min = min(delta_min, delta)
    trace.iterations_run = state.t
    return state.x_hat, trace


class AmpEstimator(BaseEstimator):
    """Estimator-style wrapper: fit on observations, read off the signal.

    Parameters mirror run_amp; `network` is the NetworkSpec tying operators,
    channels and prior together.
    """

    def __init__(self, network=None, max_iter=200, tol=1e-8, damping=0.0,
                 init="deterministic", rng=None):
        self.network = network
        self.max_iter = max_iter
        self.tol = tol
        self.damping = damping
        self.init = init
        self.rng = rng

    def fit(self, y, x0=None):
        if self.network is None:
            raise ValueError("network must be set before fitting")
        y = check_vector(y, self.network.n_obs, "y")
        x_hat, trace = run_amp(self.network, y, max_iter=self.max_iter,
                               tol=self.tol, damping=self.damping, x0=x0,
                               init=self.init, rng=self.rng)
        self.x_hat_ = x_hat
        self.trace_ = trace
        self.n_iter_ = trace.iterations_run
        self.converged_ = trace.converged
        return self

    def predict(self, y=None):
        if y is not None:
            self.fit(y)
        if not hasattr(self, "x_hat_"):
            raise ValueError("estimator is not fitted; call fit(y) first")
        return self.x_hat_
