"""Command-line harness.

Subcommands: run-sweep, run-se, run-amp, verify-permutation, bench-matvec,
gen-matrix. Exit codes: 0 ok, 1 verification failure, 2 config error,
3 numeric failure.
"""

import argparse
import sys
import time

import numpy as np

from .amp import AmpDivergedError, run_amp
from .config import ConfigError, load_config
from .experiments import (SWEEP_COLUMNS, SE_COLUMNS, render_sweep_svg,
                          run_se_sweep, run_sweep)
from .io_utils import write_csv
from .network import generate_instance
from .operators import (build_permutations, check_block_circulant,
                        sample_mcc, save_operator)
from .quadrature import QuadratureError

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_run_sweep(args):
    cfg = _load(args)
    result = run_sweep(cfg, threads=args.threads,
                       progress=lambda msg: print(msg, file=sys.stderr))
    result.save(args.out)
    print(f"wrote {len(result.rows)} rows to {args.out}")
    if args.svg:
        svg_path = args.out.rsplit(".", 1)[0] + ".svg"
        render_sweep_svg(result.rows, svg_path)
        print(f"wrote {svg_path}")
    return EXIT_OK


def cmd_run_se(args):
    cfg = _load(args)
    rows = run_se_sweep(cfg, progress=lambda msg: print(msg, file=sys.stderr))
    write_csv(args.out, SE_COLUMNS, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_run_amp(args):
    cfg = _load(args)
    point = cfg.points()[0]
    rng = cfg.trial_rng(0, 0)
    network = cfg.build_network(point, rng)
    truth = generate_instance(network, rng)
    x_hat, trace = run_amp(network, truth.y, max_iter=cfg.amp["max_iter"],
                           tol=cfg.amp["tol"], damping=cfg.amp["damping"],
                           x0=truth.x0, init=cfg.amp["init"], rng=rng)
    write_csv(args.out, ["iter", "mse_amp"],
              [[i, v] for i, v in enumerate(trace.mse)])
    print(f"converged={trace.converged} iterations={trace.iterations_run} "
          f"final_mse={trace.mse[-1]:.6e}")
    print(f"wrote {len(trace.mse)} rows to {args.out}")
    return EXIT_OK


def cmd_verify_permutation(args):
    rng = np.random.default_rng(args.seed)
    op = sample_mcc(args.D, args.P, args.q, args.k, rng)
    perm = build_permutations(args.D, args.P, args.q, args.k)
    permuted = perm.apply_to_dense(op.to_dense())
    ok, msg = check_block_circulant(permuted, args.D, args.P, args.q, args.k)
    status = "pass" if ok else "FAIL"
    print(f"permutation check (D={args.D}, P={args.P}, q={args.q}, "
          f"k={args.k}, seed={args.seed}): {status} [{msg}]")
    return EXIT_OK if ok else EXIT_VERIFY


def _time(f, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        f()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench_matvec(args):
    rng = np.random.default_rng(args.seed)
    op = sample_mcc(args.D, args.P, args.q, args.k, rng)
    dense = op.to_dense()
    v = rng.standard_normal(op.shape[1])
    ref = dense @ v
    sparse_out = op.matvec_sparse(v)
    fft_out = op.matvec_fft(v)
    err_sparse = np.max(np.abs(sparse_out - ref)) / max(1.0, np.max(np.abs(ref)))
    err_fft = np.max(np.abs(fft_out - ref)) / max(1.0, np.max(np.abs(ref)))
    t_dense = _time(lambda: dense @ v, args.reps)
    t_sparse = _time(lambda: op.matvec_sparse(v), args.reps)
    t_fft = _time(lambda: op.matvec_fft(v), args.reps)
    nnz_ratio = args.k / args.q**2
    print(f"shape {op.shape}, nonzero ratio k/q^2 = {nnz_ratio:.6g}"
          + (" (no savings when k=q)" if args.k == args.q else ""))
    print(f"dense  {t_dense * 1e3:10.3f} ms")
    print(f"sparse {t_sparse * 1e3:10.3f} ms  speedup x{t_dense / t_sparse:.2f}  "
          f"max rel err {err_sparse:.2e}")
    print(f"fft    {t_fft * 1e3:10.3f} ms  speedup x{t_dense / t_fft:.2f}  "
          f"max rel err {err_fft:.2e}")
    ok = max(err_sparse, err_fft) <= 1e-10
    if not ok:
        print("cross-check FAILED (paths disagree with the dense realization)")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_gen_matrix(args):
    rng = np.random.default_rng(args.seed)
    op = sample_mcc(args.D, args.P, args.q, args.k, rng,
                    variance_profile=args.variance_profile)
    save_operator(op, args.out, rng_seed=args.seed)
    print(f"wrote MCC({args.D}, {args.P}, {args.q}, {args.k}) to {args.out}")
    return EXIT_OK


def _add_dims(p):
    p.add_argument("D", type=int)
    p.add_argument("P", type=int)
    p.add_argument("q", type=int)
    p.add_argument("k", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="convamp",
        description="Layered signal recovery with convolutional sensing "
                    "matrices, plus its scalar state evolution.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("run-sweep", cmd_run_sweep), ("run-se", cmd_run_se),
                     ("run-amp", cmd_run_amp)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--svg", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("verify-permutation")
    _add_dims(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify_permutation)

    p = sub.add_parser("bench-matvec")
    _add_dims(p)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench_matvec)

    p = sub.add_parser("gen-matrix")
    _add_dims(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--variance-profile", type=float, nargs="+", default=None)
    p.set_defaults(fn=cmd_gen_matrix)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AmpDivergedError, QuadratureError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
