"""Layered signal model: operators chained through scalar channels.

Layers are ordered from the observation side: layer 1 produces the
measurements y through the output channel, layer L touches the prior. The
estimation target x feeds layer L. Writing z_l for the layer-l
pre-activation and h_l for the signal entering layer l (h_L = x):

    z_l = W_l h_l,   h_(l-1) = channel_l(z_(l-1+1)) ... h_(l-1) = phi_l(z_l),
    y = output_channel(z_1).
"""

from dataclasses import dataclass, field

import numpy as np

from .validation import check_rng, check_vector


@dataclass
class LayerSpec:
    """One linear stage. `channel` is the nonlinearity applied to this
    layer's output z_l (producing h_(l-1)); layer 1 leaves it None because
    interface 1 is the network-level output channel."""
    operator: object
    channel: object = None


class NetworkSpec:
    def __init__(self, layers, prior, output_channel):
        if len(layers) < 1:
            raise ValueError("need at least one layer")
        if layers[0].channel is not None:
            raise ValueError("layer 1 uses the network output channel; "
                             "leave its channel unset")
        for i, layer in enumerate(layers[1:], start=2):
            if layer.channel is None:
                raise ValueError(f"layer {i} needs a channel")
        for i in range(len(layers) - 1):
            cols = layers[i].operator.shape[1]
            rows = layers[i + 1].operator.shape[0]
            if cols != rows:
                raise ValueError(
                    f"dimension chain broken between layers {i + 1} and {i + 2}: "
                    f"{cols} != {rows}")
        self.layers = list(layers)
        self.prior = prior
        self.output_channel = output_channel

    @property
    def depth(self):
        return len(self.layers)

    @property
    def n_signal(self):
        return self.layers[-1].operator.shape[1]

    @property
    def n_obs(self):
        return self.layers[0].operator.shape[0]

    def aspect_ratios(self):
        """rows/cols per layer; the only layer statistic entering the
        state evolution."""
        return [op.shape[0] / op.shape[1]
                for op in (layer.operator for layer in self.layers)]

    def moment_chain(self):
        """Per-layer mean and second moment of the signal h_l entering each
        layer, propagated analytically from the prior downwards."""
        return moment_chain(self.prior,
                            [layer.channel for layer in self.layers[1:]])


def moment_chain(prior, middle_channels):
    """Mean and second moment of the signal entering each layer, for a chain
    with the given prior and interior channels (ordered from the interface
    next to the observations). z_l is always zero-mean (random zero-mean
    mixing), with the same second moment as h_l thanks to unit mean-square
    operator rows."""
    L = len(middle_channels) + 1
    tau = [0.0] * L
    mean = [0.0] * L
    tau[L - 1] = prior.second_moment()
    mean[L - 1] = prior.mean()
    for i in range(L - 1, 0, -1):
        ch = middle_channels[i - 1]
        tau[i - 1] = ch.second_moment_out(tau[i])
        mean[i - 1] = ch.mean_out(tau[i])
    return mean, tau


@dataclass
class GroundTruth:
    """One sampled instance: x0 plus every intermediate quantity."""
    x0: np.ndarray
    z: list = field(default_factory=list)   # z[i] is the layer-(i+1) pre-activation
    h: list = field(default_factory=list)   # h[i] enters layer i+1, for i < L-1
    y: np.ndarray = None

    def signal_for_layer(self, i):
        """True h entering layer i+1 (the estimate target of that layer)."""
        return self.x0 if i == len(self.z) - 1 else self.h[i]


def generate_instance(network, rng=None):
    """Sample x0 from the prior and push it through the chain."""
    rng = check_rng(rng)
    L = network.depth
    x0 = network.prior.sample(network.n_signal, rng)
    z = [None] * L
    h = [None] * (L - 1)
    cur = x0
    for i in range(L - 1, 0, -1):
        z[i] = network.layers[i].operator.matvec(cur)
        cur = network.layers[i].channel.sample(z[i], rng)
        h[i - 1] = cur
    z[0] = network.layers[0].operator.matvec(cur)
    y = network.output_channel.sample(z[0], rng)
    return GroundTruth(x0=x0, z=z, h=h, y=check_vector(y, network.n_obs, "y"))
