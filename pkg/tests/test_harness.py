import math

import numpy as np
import pytest

from micromacro import harness as H
from micromacro.diagnostics import read_rows_csv
from micromacro.kernels import CapabilityError
from micromacro.streams import purpose_tag, random_stream


def small_dw(tmp_path, **changes):
    base = {"sampler.N": 20_000, "sampler.n_runs": 3, "output.dir": str(tmp_path)}
    base.update(changes)
    return H.preset("double_well_1d", **base)


class TestStreams:
    def test_reproducible_and_distinct(self):
        a = random_stream(1, 0, "sample").random(4)
        assert np.array_equal(a, random_stream(1, 0, "sample").random(4))
        assert not np.array_equal(a, random_stream(1, 1, "sample").random(4))
        assert not np.array_equal(a, random_stream(1, 0, "init").random(4))
        assert not np.array_equal(a, random_stream(2, 0, "sample").random(4))

    def test_tag_is_stable(self):
        # CRC32 of the ASCII bytes
        assert purpose_tag("a") == 0xE8B7BE43


class TestConfig:
    def test_round_trip(self):
        cfg = H.preset("three_atom", **{"model.epsilon": 1e-4, "sampler.n_runs": 3})
        back = H.parse_config(cfg.to_text())
        assert back == cfg

    def test_parse_comments_and_none(self):
        cfg = H.parse_config("model.name = alanine  # torsions\n\nsampler.K = none\nsampler.N = 1e3\n")
        assert cfg.model_name == "alanine"
        assert cfg.sampler_K is None
        assert cfg.sampler_N == 1000

    @pytest.mark.parametrize("text", ["sampler.K = 2.5", "nonsense", "sampler.bogus = 1", "output.dump_chains = maybe"])
    def test_parse_errors(self, text):
        with pytest.raises(H.ConfigError, match="line 1"):
            H.parse_config(text)

    def test_three_atom_defaults(self):
        c = H.preset("three_atom", **{"model.epsilon": 1e-5})
        assert c.sampler_lambda == pytest.approx(1e5)
        assert c.sampler_dt_micro == 1e-5
        assert (c.sampler_K, c.sampler_dt_macro, c.grid_J) == (5, 0.01, 200)
        assert c.grid_lambda == pytest.approx(1e7)
        assert c.grid_dt == pytest.approx(1e-7)
        assert c.baseline_dt == 1e-5

    def test_alanine_defaults(self):
        c = H.preset("alanine")
        assert (c.sampler_beta, c.sampler_lambda, c.sampler_K, c.sampler_dt_macro) == (0.01, 2.5e6, 8, 0.001)
        assert c.sampler_dt_micro == pytest.approx(0.5 / 2.5e6)
        assert c.baseline_dt == 1e-7

    def test_explicit_values_win(self):
        c = H.preset("three_atom", **{"sampler.lambda": 123.0})
        assert c.sampler_lambda == 123.0

    def test_unknown_model(self):
        with pytest.raises(H.ConfigError):
            H.preset("argon")

    def test_capability(self):
        with pytest.raises(CapabilityError):
            H.validate(H.preset("alanine", **{"sampler.name": "mm_direct"}))
        H.validate(H.preset("three_atom", **{"sampler.name": "mm_direct"}))

    @pytest.mark.parametrize("key, value", [("sampler.N", -1), ("sampler.dt_macro", 0.0), ("sampler.name", "hmc"),
                                            ("observables", "median:x"), ("grid.J", 1), ("sampler.n_runs", 0)])
    def test_validation(self, key, value):
        with pytest.raises(H.ConfigError):
            H.validate(H.preset("double_well_1d", **{key: value}))


class TestSweepConfig:
    def test_lambda_keeps_product(self):
        c = H.preset("three_atom", **{"model.epsilon": 1e-6})
        s = H.sweep_config(c, "lambda", 1e8)
        assert s.sampler_lambda == 1e8
        assert s.sampler_lambda * s.sampler_dt_micro == pytest.approx(1.0)

    def test_epsilon_follows_defaults(self):
        c = H.ExperimentConfig(model_name="three_atom", model_epsilon=1e-3)
        s = H.sweep_config(c, "epsilon", 1e-5)
        assert s.sampler_lambda == pytest.approx(1e5)
        assert s.baseline_dt == pytest.approx(1e-5)

    def test_epsilon_rescales_explicit(self):
        c = H.ExperimentConfig(model_name="three_atom", model_epsilon=1e-3, sampler_lambda=2e3)
        assert H.sweep_config(c, "epsilon", 1e-4).sampler_lambda == pytest.approx(2e4)

    def test_bad_parameter(self):
        with pytest.raises(H.ConfigError):
            H.sweep_config(H.ExperimentConfig(), "beta", 2.0)
        with pytest.raises(H.ConfigError):
            H.sweep_config(H.ExperimentConfig(), "K", 2.5)


class TestSample:
    def test_report_files_are_deterministic(self, tmp_path):
        a = H.cmd_sample(small_dw(tmp_path / "a"))
        b = H.cmd_sample(small_dw(tmp_path / "b"), workers=3)
        for name in ("mm_indirect_report.csv", "mm_indirect_histogram.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert len(a.runs) == 3
        assert a.histogram.total == 3 * 20_000

    def test_report_parses_back(self, tmp_path):
        rep = H.cmd_sample(small_dw(tmp_path))
        header, rows = read_rows_csv(tmp_path / "mm_indirect_report.csv")
        table = {(r[1], r[2]): r[3] for r in rows}
        assert table[("mean:x", "replicate_variance")] == rep.replicate_variance("mean:x")
        assert table[("mean:x", "run1:estimate")] == rep.runs[1].estimates["mean:x"]
        timing = read_rows_csv(tmp_path / "mm_indirect_timing.csv")[1]
        assert len(timing) == 3 and all(t[3] > 0 for t in timing)

    def test_runs_differ(self, tmp_path):
        rep = H.cmd_sample(small_dw(tmp_path))
        est = rep.estimates("mean:x")
        assert len(set(est.tolist())) == 3

    def test_residual_law_reported(self, tmp_path):
        rep = H.cmd_sample(small_dw(tmp_path, **{"sampler.N": 100_000, "sampler.n_runs": 1}))
        r = rep.runs[0]
        assert r.residual_var * 1000.0 == pytest.approx(1.0, rel=0.1)

    def test_identical_configs_have_unit_variance_gain(self, tmp_path):
        c = small_dw(tmp_path)
        reports, ref, new = H.cmd_compare(c, c)
        for r in reports:
            assert r.variance_gain == 1.0
        assert (tmp_path / "compare.csv").exists()

    def test_mala_baseline(self, tmp_path):
        c = H.baseline_config(small_dw(tmp_path))
        assert c.sampler_name == "mala"
        rep = H.cmd_sample(c)
        assert math.isnan(rep.runs[0].residual_mean)
        assert 0.9 < rep.macro_acceptance <= 1.0

    def test_unknown_observable(self, tmp_path):
        with pytest.raises(H.ConfigError):
            H.cmd_sample(small_dw(tmp_path, observables="mean:theta"))

    def test_initial_configs(self, tmp_path):
        from micromacro.models import DoubleWellModel

        m = DoubleWellModel(2.0)
        rng = np.random.default_rng(0)
        assert H._initial_config(small_dw(tmp_path, **{"sampler.init": "left"}), m, rng)[0] == -1.0
        assert H._initial_config(small_dw(tmp_path, **{"sampler.init": "0.25"}), m, rng)[0] == 0.25
        starts = {H._initial_config(small_dw(tmp_path, **{"sampler.init": "random"}), m, rng)[0] for _ in range(20)}
        assert starts == {-1.0, 1.0}
        with pytest.raises(H.ConfigError):
            H._initial_config(small_dw(tmp_path, **{"sampler.init": "middle"}), m, rng)


class TestPrecompute:
    def test_deterministic_tables_file(self, tmp_path):
        kw = {"model.epsilon": 1e-3, "grid.J": 9, "grid.N_per_node": 300, "grid.M_per_node": 300,
              "output.dir": str(tmp_path)}
        H._TABLE_CACHE.clear()
        p1, t1, est = H.cmd_precompute(H.preset("three_atom", **kw), tmp_path / "a.txt")
        H._TABLE_CACHE.clear()
        p2, _, _ = H.cmd_precompute(H.preset("three_atom", **kw), tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        assert est is not None and t1.J == 9

    def test_loaded_tables_are_rescaled(self, tmp_path):
        kw = {"grid.J": 41, "output.dir": str(tmp_path)}
        path, t, _ = H.cmd_precompute(H.preset("double_well_1d", **kw), tmp_path / "dw.txt")
        c = H.preset("double_well_1d", **kw, **{"tables.path": str(path), "sampler.lambda": 50.0,
                                               "grid.M_per_node": 2000})
        u = H.obtain_tables(c)
        assert u.lam == 50.0
        assert np.array_equal(u.free_energy.values, t.free_energy.values)
        assert not np.array_equal(u.n_lambda.values, t.n_lambda.values)

    def test_off_grid_option(self, tmp_path):
        c = small_dw(tmp_path, **{"tables.off_grid": "zero"})
        assert H.obtain_tables(c).off_grid == "zero"


class TestCli:
    def test_precompute_and_sample(self, tmp_path, capsys):
        out = str(tmp_path)
        common = ["--set", "model.name=double_well_1d", "--set", "sampler.N=5000", "--out", out]
        assert H.main(["precompute", *common]) == 0
        assert (tmp_path / "tables.txt").exists()
        assert H.main(["sample", *common, "--set", f"tables.path={out}/tables.txt", "--seed", "3"]) == 0
        assert "macro acceptance" in capsys.readouterr().out
        assert (tmp_path / "mm_indirect_report.csv").exists()

    def test_compare_and_sweep(self, tmp_path, capsys):
        common = ["--set", "model.name=double_well_1d", "--set", "sampler.N=5000", "--set", "sampler.n_runs=2",
                  "--out", str(tmp_path)]
        assert H.main(["compare", *common]) == 0
        assert "gain" in capsys.readouterr().out
        assert H.main(["sweep", *common, "--param", "K", "--values", "2,4"]) == 0
        header, rows = read_rows_csv(tmp_path / "sweep.csv")
        assert header[:3] == ["value", "observable", "gain"]
        assert {r[0] for r in rows} == {2.0, 4.0}

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("model.name = double_well_1d\nsampler.N = 2000\n")
        assert H.main(["sample", "--config", str(cfg), "--out", str(tmp_path)]) == 0

    @pytest.mark.parametrize("argv", [
        ["sample", "--set", "sampler.K=0", "--set", "model.name=double_well_1d"],
        ["sample", "--set", "model.name=alanine", "--set", "sampler.name=mm_direct"],
        ["sample", "--set", "nokey"],
        ["sample", "--config", "/nonexistent/config.txt"],
    ])
    def test_errors_exit_2(self, argv, tmp_path, capsys):
        assert H.main([*argv, "--out", str(tmp_path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit):
            H.main(["dance"])
