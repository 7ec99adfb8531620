"""Sweep orchestration: repeated recovery trials against the scalar recursion.

For every sweep point, `trials` independent instances are drawn (child
generators keyed by seed, point and trial, so execution order is
irrelevant), the engine runs on each, and one state-evolution trace is
computed from the point's aspect ratios. Per-iteration aggregates go to CSV;
converged trials hold their final value when padded to a common length.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .amp import AmpDivergedError, run_amp
from .io_utils import write_csv
from .network import generate_instance
from .state_evolution import SeParams, se_run

SWEEP_COLUMNS = ["beta", "rho", "iter", "mse_amp_mean", "mse_amp_stderr",
                 "mse_se", "n_trials", "converged_fraction"]
SE_COLUMNS = ["beta", "rho", "iter", "layer", "m", "m_hat", "mse_se"]


@dataclass
class TrialResult:
    mse: list
    converged: bool
    diverged: bool = False


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)   # SWEEP_COLUMNS order

    def save(self, path):
        write_csv(path, SWEEP_COLUMNS, self.rows)


def pad_series(seq, length):
    seq = list(seq)
    if not seq:
        return [np.nan] * length
    return (seq + [seq[-1]] * max(0, length - len(seq)))[:length]


def _se_params_for(config, point):
    shapes = config.layer_shapes(point)
    betas = [r / c for (r, c) in shapes]
    return SeParams.from_parts(betas, config.prior_for(point),
                               config.output_channel, config.middle_channels,
                               nodes=config.se["quadrature_nodes"])


def run_se_point(config, point):
    params = _se_params_for(config, point)
    return se_run(params, max_iter=config.se["max_iter"], tol=config.se["tol"])


def run_trial(config, point, point_index, trial_index):
    rng = config.trial_rng(point_index, trial_index)
    network = config.build_network(point, rng)
    truth = generate_instance(network, rng)
    try:
        _, trace = run_amp(network, truth.y,
                           max_iter=config.amp["max_iter"],
                           tol=config.amp["tol"],
                           damping=config.amp["damping"],
                           x0=truth.x0, init=config.amp["init"], rng=rng)
    except AmpDivergedError:
        return TrialResult(mse=[], converged=False, diverged=True)
    return TrialResult(mse=trace.mse, converged=trace.converged)


def run_sweep(config, threads=1, progress=None):
    result = SweepResult()
    for p, point in enumerate(config.points()):
        if progress:
            progress(f"sweep point {p + 1}/{len(config.points())}: {point}")
        se_trace = run_se_point(config, point)
        indices = list(range(config.trials))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                trials = list(pool.map(
                    lambda j: run_trial(config, point, p, j), indices))
        else:
            trials = [run_trial(config, point, p, j) for j in indices]

        live = [t.mse for t in trials if not t.diverged and t.mse]
        length = max([len(m) for m in live] + [len(se_trace.mse)])
        se_mse = pad_series(se_trace.mse, length)
        padded = np.array([pad_series(m, length) for m in live]) if live else None
        conv_frac = sum(t.converged for t in trials) / config.trials
        beta = config.achieved_beta(point)
        rho = config.rho_value(point)
        for it in range(length):
            if padded is not None:
                mean = float(np.mean(padded[:, it]))
                stderr = (float(np.std(padded[:, it], ddof=1))
                          / np.sqrt(len(live)) if len(live) > 1 else 0.0)
            else:
                mean, stderr = np.nan, np.nan
            result.rows.append([beta, rho, it, mean, stderr, se_mse[it],
                                config.trials, conv_frac])
    return result


def run_se_sweep(config, progress=None):
    """State evolution only; one row per (point, iteration, layer)."""
    rows = []
    for p, point in enumerate(config.points()):
        if progress:
            progress(f"se point {p + 1}/{len(config.points())}: {point}")
        trace = run_se_point(config, point)
        beta = config.achieved_beta(point)
        rho = config.rho_value(point)
        depth = config.depth
        for it in range(len(trace.mse)):
            for layer in range(depth):
                rows.append([beta, rho, it, layer + 1, trace.m[it][layer],
                             trace.m_hat[it][layer], trace.mse[it]])
    return rows


def render_sweep_svg(csv_rows, path):
    """Two-panel summary: error vs iteration per point, final error vs point."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_point = {}
    for row in csv_rows:
        by_point.setdefault((row[0], row[1]), []).append(row)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    finals = []
    for (beta, rho), rows in sorted(by_point.items()):
        rows = sorted(rows, key=lambda r: r[2])
        iters = [r[2] for r in rows]
        label = f"beta={beta:.3g}" if not np.isnan(beta) else f"rho={rho:.3g}"
        amp = [r[3] for r in rows]
        se = [r[5] for r in rows]
        line, = ax1.plot(iters, se, "-", label=label)
        if not all(np.isnan(amp)):
            ax1.plot(iters, amp, "x", color=line.get_color(), markersize=3)
        finals.append((beta, amp[-1], se[-1]))
    ax1.set_yscale("log")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("mse")
    ax1.legend(fontsize=7)
    if len(finals) > 1:
        finals.sort()
        ax2.plot([f[0] for f in finals], [f[2] for f in finals], "-", label="state evolution")
        ax2.plot([f[0] for f in finals], [f[1] for f in finals], "x", label="empirical")
        ax2.set_xlabel("aspect ratio")
        ax2.set_ylabel("final mse")
        ax2.set_yscale("log")
        ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
