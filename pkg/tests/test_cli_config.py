import json

import numpy as np
import pytest

from convamp.cli import main
from convamp.config import ConfigError, parse_config
from convamp.experiments import SWEEP_COLUMNS, run_sweep
from convamp.io_utils import read_csv, write_csv
from convamp.operators import load_operator


def base_config(**overrides):
    doc = {
        "layers": [{"matrix": {"kind": "mcc", "P": 32, "q": 10, "k": 3}}],
        "prior": {"type": "gauss_bernoulli", "rho": 0.25},
        "output_channel": {"type": "awgn", "sigma2": 1e-4},
        "sweep": {"beta_values": [0.6]},
        "trials": 2,
        "seed": 11,
        "amp": {"max_iter": 25, "tol": 1e-8},
        "se": {"max_iter": 25, "tol": 1e-9},
    }
    doc.update(overrides)
    return doc


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestConfigParsing:
    def test_valid_config(self):
        cfg = parse_config(base_config())
        assert cfg.depth == 1
        assert cfg.points() == [0.6]
        assert cfg.achieved_beta(0.6) == pytest.approx(19 / 32)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config(base_config(extra=1))

    def test_unknown_nested_key(self):
        doc = base_config()
        doc["layers"][0]["matrix"]["stride"] = 2
        with pytest.raises(ConfigError, match="unknown"):
            parse_config(doc)

    def test_swept_dimension_must_be_omitted(self):
        doc = base_config()
        doc["layers"][0]["matrix"]["D"] = 20
        with pytest.raises(ConfigError, match="omit"):
            parse_config(doc)

    def test_k_greater_than_q(self):
        doc = base_config()
        doc["layers"][0]["matrix"]["k"] = 11
        with pytest.raises(ConfigError, match="k must not exceed q"):
            parse_config(doc)

    def test_rho_sweep_requires_gb_prior(self):
        doc = base_config(sweep={"rho_values": [0.2, 0.4]},
                          prior={"type": "gaussian"})
        doc["layers"][0]["matrix"]["D"] = 20
        with pytest.raises(ConfigError, match="gauss_bernoulli"):
            parse_config(doc)

    def test_rho_sweep_valid(self):
        doc = base_config(sweep={"rho_values": [0.2, 0.4]},
                          prior={"type": "gauss_bernoulli"})
        doc["layers"][0]["matrix"]["D"] = 20
        cfg = parse_config(doc)
        assert cfg.points() == [0.2, 0.4]
        assert cfg.prior_for(0.2).rho == 0.2

    def test_dimension_chain_checked(self):
        doc = base_config()
        doc["layers"].append({"matrix": {"kind": "dense", "rows": 999,
                                         "cols": 100},
                              "channel": {"type": "relu"}})
        with pytest.raises(ConfigError, match="chain"):
            parse_config(doc)

    def test_trials_positive(self):
        with pytest.raises(ConfigError, match="trials"):
            parse_config(base_config(trials=0))

    def test_zero_iteration_se_rejected(self):
        with pytest.raises(ConfigError, match="max_iter"):
            parse_config(base_config(se={"max_iter": 0}))

    def test_multilayer_parses(self):
        doc = base_config()
        doc["layers"] = [
            {"matrix": {"kind": "dense", "cols": 320}},
            {"matrix": {"kind": "mcc", "D": 32, "P": 16, "q": 10, "k": 3},
             "channel": {"type": "relu"}},
        ]
        doc["prior"] = {"type": "gaussian", "mean": 0, "var": 1}
        cfg = parse_config(doc)
        net = cfg.build_network(0.6, np.random.default_rng(0))
        assert net.depth == 2
        assert net.n_signal == 160
        assert net.layers[0].operator.shape == (192, 320)


class TestDeterminism:
    def test_same_seed_same_rows(self, tmp_path):
        cfg1 = parse_config(base_config())
        cfg2 = parse_config(base_config())
        r1 = run_sweep(cfg1)
        r2 = run_sweep(cfg2)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        r1.save(p1)
        r2.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_trial_streams_keyed_not_ordered(self):
        cfg = parse_config(base_config())
        a = cfg.trial_rng(0, 1).standard_normal(4)
        cfg.trial_rng(0, 0)     # consuming another stream changes nothing
        b = cfg.trial_rng(0, 1).standard_normal(4)
        assert np.array_equal(a, b)

    def test_csv_round_trip_exact(self, tmp_path):
        rows = [[0.6, 0.25, 0, 1 / 3, np.pi, 2.0**-40, 10, 0.5]]
        path = tmp_path / "r.csv"
        write_csv(path, SWEEP_COLUMNS, rows)
        header, parsed = read_csv(path)
        assert header == SWEEP_COLUMNS
        assert parsed[0] == rows[0]      # bit-exact float round trip


class TestCli:
    def test_run_sweep_and_svg(self, tmp_path):
        cfg = write_config(tmp_path, base_config())
        out = str(tmp_path / "sweep.csv")
        assert main(["run-sweep", "--config", cfg, "--out", out, "--svg"]) == 0
        header, rows = read_csv(out)
        assert header == SWEEP_COLUMNS
        assert rows and rows[0][2] == 0.0            # iteration-0 row present
        assert (tmp_path / "sweep.svg").exists()

    def test_trials_one_row_per_iteration(self, tmp_path):
        doc = base_config(trials=1)
        doc["amp"]["max_iter"] = 1
        doc["se"]["max_iter"] = 1
        cfg = write_config(tmp_path, doc)
        out = str(tmp_path / "one.csv")
        assert main(["run-sweep", "--config", cfg, "--out", out]) == 0
        _, rows = read_csv(out)
        assert len(rows) == 2                        # iterations 0 and 1

    def test_run_se(self, tmp_path):
        cfg = write_config(tmp_path, base_config())
        out = str(tmp_path / "se.csv")
        assert main(["run-se", "--config", cfg, "--out", out]) == 0
        header, rows = read_csv(out)
        assert header == ["beta", "rho", "iter", "layer", "m", "m_hat", "mse_se"]
        first = rows[0]
        assert first[2] == 0.0 and first[6] == pytest.approx(0.25)

    def test_run_amp_single_instance(self, tmp_path):
        cfg = write_config(tmp_path, base_config())
        out = str(tmp_path / "amp.csv")
        assert main(["run-amp", "--config", cfg, "--out", out]) == 0
        header, rows = read_csv(out)
        assert header == ["iter", "mse_amp"]
        assert len(rows) >= 2

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_config(tmp_path, base_config())
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        main(["run-sweep", "--config", cfg, "--out", a])
        main(["run-sweep", "--config", cfg, "--out", b, "--seed", "99"])
        assert open(a).read() != open(b).read()

    def test_config_error_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, base_config(bogus=1))
        assert main(["run-sweep", "--config", cfg, "--out",
                     str(tmp_path / "x.csv")]) == 2
        missing = str(tmp_path / "nope.json")
        assert main(["run-sweep", "--config", missing, "--out",
                     str(tmp_path / "x.csv")]) == 2

    def test_verify_permutation_pass_and_edge(self):
        assert main(["verify-permutation", "4", "3", "3", "2", "--seed", "1"]) == 0
        assert main(["verify-permutation", "1", "1", "6", "2"]) == 0
        assert main(["verify-permutation", "3", "5", "7", "7"]) == 0

    def test_bench_matvec(self, capsys):
        assert main(["bench-matvec", "2", "2", "16", "16", "--reps", "2"]) == 0
        out = capsys.readouterr().out
        assert "no savings when k=q" in out
        assert main(["bench-matvec", "2", "2", "64", "3", "--reps", "2"]) == 0

    def test_gen_matrix_round_trip(self, tmp_path):
        out = str(tmp_path / "op.json")
        assert main(["gen-matrix", "3", "2", "6", "2", "--seed", "5",
                     "--out", out]) == 0
        op = load_operator(out)
        assert (op.D, op.P, op.q, op.k) == (3, 2, 6, 2)
        doc = json.loads(open(out).read())
        assert doc["rng_seed"] == 5
        assert len(doc["taps"]) == 3 * 2 * 2

    def test_threads_do_not_change_results(self, tmp_path):
        cfg = write_config(tmp_path, base_config(trials=3))
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        main(["run-sweep", "--config", cfg, "--out", a])
        main(["run-sweep", "--config", cfg, "--out", b, "--threads", "2"])
        assert open(a).read() == open(b).read()

    def test_numeric_failure_exit_code(self, tmp_path, monkeypatch):
        from convamp.amp import AmpDivergedError
        import convamp.cli as cli_mod

        def boom(args):
            raise AmpDivergedError(3)

        monkeypatch.setattr(cli_mod, "cmd_run_amp", boom)
        cfg = write_config(tmp_path, base_config())
        parser = cli_mod.build_parser()
        args = parser.parse_args(["run-amp", "--config", cfg, "--out",
                                  str(tmp_path / "x.csv")])
        args.fn = boom
        monkeypatch.setattr(parser.__class__, "parse_args",
                            lambda self, argv=None: args)
        monkeypatch.setattr(cli_mod, "build_parser", lambda: parser)
        assert cli_mod.main([]) == 3
