"""Experiment configuration: strict JSON schema, network factories.

The layer list is ordered from the observation side: entry 0 is the layer
producing the measurements (its nonlinearity is the top-level
output_channel), later entries carry their own channel. A sweep varies
either the first layer's aspect ratio (its "D"/"rows" is then computed per
point and must be omitted) or the gauss-bernoulli sparsity. Unknown keys are
rejected everywhere: a config either matches the schema or the run aborts.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .channels import channel_from_config, prior_from_config
from .network import LayerSpec, NetworkSpec
from .operators import sample_dense_gaussian, sample_mcc


class ConfigError(ValueError):
    pass


AMP_DEFAULTS = {"max_iter": 200, "tol": 1e-8, "damping": 0.0, "init": "deterministic"}
SE_DEFAULTS = {"max_iter": 200, "tol": 1e-10, "quadrature_nodes": 61}


def _require_keys(obj, allowed, required, where):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _check_matrix(spec, index, swept):
    where = f"layers[{index}].matrix"
    if not isinstance(spec, dict):
        raise ConfigError(f"{where}: must be an object")
    kind = spec.get("kind")
    if kind == "mcc":
        required = {"P", "q", "k"} if swept else {"D", "P", "q", "k"}
        _require_keys(spec, {"kind", "D", "P", "q", "k", "variance_profile"},
                      required, where)
        if swept and "D" in spec:
            raise ConfigError(f"{where}: D is computed from the sweep; omit it")
        for name in ("D", "P", "q", "k"):
            if name in spec and (not isinstance(spec[name], int) or spec[name] < 1):
                raise ConfigError(f"{where}.{name}: positive integer required")
        if spec["k"] > spec["q"]:
            raise ConfigError(f"{where}: k must not exceed q")
    elif kind == "dense":
        required = {"cols"} if swept else {"rows", "cols"}
        _require_keys(spec, {"kind", "rows", "cols", "variance"}, required, where)
        if swept and "rows" in spec:
            raise ConfigError(f"{where}: rows is computed from the sweep; omit it")
        for name in ("rows", "cols"):
            if name in spec and (not isinstance(spec[name], int) or spec[name] < 1):
                raise ConfigError(f"{where}.{name}: positive integer required")
    else:
        raise ConfigError(f"{where}: kind must be 'mcc' or 'dense'")
    return dict(spec)


@dataclass
class ExperimentConfig:
    matrices: list                   # validated matrix specs, observation side first
    middle_channels: list            # channel objects for layers 2..L
    prior_spec: dict
    output_channel: object
    sweep_kind: str = None           # "beta" | "rho" | None
    sweep_values: list = field(default_factory=list)
    trials: int = 1
    seed: int = 0
    amp: dict = field(default_factory=lambda: dict(AMP_DEFAULTS))
    se: dict = field(default_factory=lambda: dict(SE_DEFAULTS))

    @property
    def depth(self):
        return len(self.matrices)

    def points(self):
        """Sweep points as (label_value or None) in configured order."""
        if self.sweep_kind is None:
            return [None]
        return list(self.sweep_values)

    def _matrix_dims(self, spec, value):
        if spec["kind"] == "mcc":
            P, q = spec["P"], spec["q"]
            D = spec.get("D")
            if D is None:
                D = max(1, int(round(value * P)))
            return D * q, P * q, {"D": D}
        cols = spec["cols"]
        rows = spec.get("rows")
        if rows is None:
            rows = max(1, int(round(value * cols)))
        return rows, cols, {"rows": rows}

    def layer_shapes(self, point):
        shapes = []
        for i, spec in enumerate(self.matrices):
            value = point if (i == 0 and self.sweep_kind == "beta") else None
            rows, cols, _ = self._matrix_dims(spec, value)
            shapes.append((rows, cols))
        return shapes

    def prior_for(self, point):
        spec = dict(self.prior_spec)
        if self.sweep_kind == "rho":
            spec["rho"] = point
        return prior_from_config(spec)

    def build_network(self, point, rng):
        """Sample operators for one sweep point."""
        layers = []
        for i, spec in enumerate(self.matrices):
            value = point if (i == 0 and self.sweep_kind == "beta") else None
            rows, cols, extra = self._matrix_dims(spec, value)
            if spec["kind"] == "mcc":
                op = sample_mcc(extra["D"], spec["P"], spec["q"], spec["k"], rng,
                                variance_profile=spec.get("variance_profile"))
            else:
                op = sample_dense_gaussian(rows, cols, rng,
                                           variance=spec.get("variance"))
            layers.append(LayerSpec(op, None if i == 0 else
                                    self.middle_channels[i - 1]))
        return NetworkSpec(layers, self.prior_for(point), self.output_channel)

    def achieved_beta(self, point):
        rows, cols = self.layer_shapes(point)[0]
        return rows / cols

    def rho_value(self, point):
        if self.sweep_kind == "rho":
            return float(point)
        return float(self.prior_spec.get("rho", np.nan))

    def trial_rng(self, point_index, trial_index):
        """Child generator keyed by (seed, sweep point, trial); execution
        order never changes the stream."""
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed,
                                   spawn_key=(point_index, trial_index)))


def parse_config(doc):
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(doc, {"layers", "prior", "output_channel", "sweep", "trials",
                        "seed", "amp", "se"},
                  {"layers", "prior", "output_channel"}, "config")

    sweep_kind, sweep_values = None, []
    if "sweep" in doc:
        sweep = doc["sweep"]
        if not isinstance(sweep, dict):
            raise ConfigError("sweep: must be an object")
        _require_keys(sweep, {"beta_values", "rho_values"}, set(), "sweep")
        if len(sweep) != 1:
            raise ConfigError("sweep: give exactly one of beta_values, rho_values")
        if "beta_values" in sweep:
            sweep_kind, sweep_values = "beta", list(sweep["beta_values"])
        else:
            sweep_kind, sweep_values = "rho", list(sweep["rho_values"])
        if not sweep_values:
            raise ConfigError("sweep: value list is empty")
        if any(not isinstance(v, (int, float)) or v <= 0 for v in sweep_values):
            raise ConfigError("sweep: values must be positive numbers")

    layers = doc["layers"]
    if not isinstance(layers, list) or not layers:
        raise ConfigError("layers: non-empty list required")
    matrices, middles = [], []
    for i, entry in enumerate(layers):
        if not isinstance(entry, dict):
            raise ConfigError(f"layers[{i}]: must be an object")
        allowed = {"matrix"} if i == 0 else {"matrix", "channel"}
        required = {"matrix"} if i == 0 else {"matrix", "channel"}
        _require_keys(entry, allowed, required, f"layers[{i}]")
        matrices.append(_check_matrix(entry["matrix"], i,
                                      swept=(i == 0 and sweep_kind == "beta")))
        if i > 0:
            try:
                middles.append(channel_from_config(entry["channel"]))
            except ValueError as exc:
                raise ConfigError(f"layers[{i}].channel: {exc}") from exc

    prior_spec = doc["prior"]
    if not isinstance(prior_spec, dict):
        raise ConfigError("prior: must be an object")
    if sweep_kind == "rho":
        if prior_spec.get("type") != "gauss_bernoulli":
            raise ConfigError("rho sweeps require a gauss_bernoulli prior")
        if "rho" in prior_spec:
            raise ConfigError("prior.rho is computed from the sweep; omit it")
        try:
            prior_from_config({**prior_spec, "rho": 0.5})
        except ValueError as exc:
            raise ConfigError(f"prior: {exc}") from exc
    else:
        try:
            prior_from_config(prior_spec)
        except ValueError as exc:
            raise ConfigError(f"prior: {exc}") from exc

    try:
        output_channel = channel_from_config(doc["output_channel"])
    except ValueError as exc:
        raise ConfigError(f"output_channel: {exc}") from exc

    trials = doc.get("trials", 1)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("trials: positive integer required")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: nonnegative integer required")

    amp = dict(AMP_DEFAULTS)
    if "amp" in doc:
        _require_keys(doc["amp"], set(AMP_DEFAULTS), set(), "amp")
        amp.update(doc["amp"])
    if amp["damping"] != "auto" and not 0.0 <= float(amp["damping"]) < 1.0:
        raise ConfigError("amp.damping: number in [0, 1) or 'auto'")
    if amp["max_iter"] < 1:
        raise ConfigError("amp.max_iter: must be >= 1")

    se = dict(SE_DEFAULTS)
    if "se" in doc:
        _require_keys(doc["se"], set(SE_DEFAULTS), set(), "se")
        se.update(doc["se"])
    if se["max_iter"] < 1:
        raise ConfigError("se.max_iter: must be >= 1")
    if se["quadrature_nodes"] < 2:
        raise ConfigError("se.quadrature_nodes: must be >= 2")

    cfg = ExperimentConfig(matrices=matrices, middle_channels=middles,
                           prior_spec=prior_spec, output_channel=output_channel,
                           sweep_kind=sweep_kind, sweep_values=sweep_values,
                           trials=trials, seed=seed, amp=amp, se=se)
    # dimension chain must hold for every sweep point
    for point in cfg.points():
        shapes = cfg.layer_shapes(point)
        for i in range(len(shapes) - 1):
            if shapes[i][1] != shapes[i + 1][0]:
                raise ConfigError(
                    f"dimension chain broken between layers {i + 1} and {i + 2} "
                    f"(point {point}): {shapes[i][1]} != {shapes[i + 1][0]}")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return parse_config(doc)
