import json
import math

import numpy as np
import pytest
from scipy import stats

from pldp_shuffle.clone_probability import PMode
from pldp_shuffle.errors import ConfigError
from pldp_shuffle.experiment import (
    CSV_COLUMNS,
    EpsGrid,
    EpsilonLaw,
    ExperimentConfig,
    LawKind,
    PRESETS,
    Table,
    build_config,
    build_population,
    emit,
    parse_csv,
    parse_grid,
    parse_law,
    read_config_file,
    render,
    run_bound_curve,
    run_clone_profile,
    run_inverse,
    sample_epsilons,
)
from pldp_shuffle.mechanisms import MechanismKind


def config(**kw):
    base = dict(n=50, law=PRESETS["uniform1"], seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


def clipped_normal_mean(mu, sd, lo, hi):
    a, b = (lo - mu) / sd, (hi - mu) / sd
    inside = stats.norm.cdf(b) - stats.norm.cdf(a)
    body = mu * inside + sd * (stats.norm.pdf(a) - stats.norm.pdf(b))
    return body + lo * stats.norm.cdf(a) + hi * stats.norm.sf(b)


class TestLaw:
    @pytest.mark.parametrize("kwargs, field", [
        (dict(kind="uniform", params=(2.0, 1.0), clip=(0.1, 3.0)), "eps_law"),
        (dict(kind="uniform", params=(1.0,), clip=None), "eps_law"),
        (dict(kind="gaussian_clipped", params=(1.0, 0.5), clip=None), "clip"),
        (dict(kind="gaussian_clipped", params=(1.0, -0.5), clip=(0.1, 2.0)), "eps_law"),
        (dict(kind="explicit_list", params=(1.0, -2.0)), "eps_law"),
        (dict(kind="uniform", params=(0.5, 1.0), clip=(0.0, 1.0)), "clip"),
        (dict(kind="uniform", params=(0.5, 1.0), clip=(2.0, 1.0)), "clip"),
        (dict(kind="uniform", params=(-0.5, 1.0), clip=None), "eps_law"),
    ])
    def test_validation(self, kwargs, field):
        with pytest.raises(ConfigError) as info:
            EpsilonLaw(**kwargs)
        assert info.value.field == field

    @pytest.mark.parametrize("text, kind, params, clip", [
        ("uniform:0.5:2", LawKind.UNIFORM, (0.5, 2.0), None),
        ("gaussian_clipped:0.8:0.5", LawKind.GAUSSIAN_CLIPPED, (0.8, 0.5), (0.05, 1.0)),
        ("explicit_list:1,2,3", LawKind.EXPLICIT_LIST, (1.0, 2.0, 3.0), None),
        ("list:0.5", LawKind.EXPLICIT_LIST, (0.5,), None),
        ("Uniform2", LawKind.UNIFORM, (0.5, 2.0), (0.5, 2.0)),
    ])
    def test_parse(self, text, kind, params, clip):
        law = parse_law(text, clip if kind is LawKind.GAUSSIAN_CLIPPED else None)
        assert law.kind is kind and law.params == params
        if clip is not None:
            assert law.clip == clip

    def test_preset_clip_override(self):
        assert parse_law("gauss2", (0.6, 1.9)).clip == (0.6, 1.9)

    @pytest.mark.parametrize("text", ["poisson:1:2", "uniform:a:b", "explicit_list:1,x"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_law(text)

    def test_presets(self):
        assert PRESETS["gauss1"].params == (0.8, 0.5) and PRESETS["gauss1"].clip == (0.05, 1.0)
        assert PRESETS["uniform2"].clip == (0.5, 2.0)


class TestGrid:
    def test_parse(self):
        g = parse_grid("0.001:2:64")
        assert (g.lo, g.hi, g.points) == (0.001, 2.0, 64)
        v = g.values()
        assert v[0] == pytest.approx(0.001) and v[-1] == pytest.approx(2.0) and v.size == 64
        assert np.allclose(np.diff(np.log(v)), np.log(2000) / 63)

    @pytest.mark.parametrize("text", ["1:0.5:10", "0:1:10", "0.1:1:1", "0.1:1", "0.1:1:x"])
    def test_errors(self, text):
        with pytest.raises(ConfigError) as info:
            parse_grid(text)
        assert info.value.field == "eps_grid"


class TestConfig:
    @pytest.mark.parametrize("kwargs, field", [
        (dict(n=0), "n"),
        (dict(n=2.5), "n"),
        (dict(mechanism="laplace", delta_local=1e-6), "delta_local"),
        (dict(mechanism="gaussian", delta_local=0.0), "delta_local"),
        (dict(delta_local=1.0, mechanism="gaussian"), "delta_local"),
        (dict(mechanism="exponential"), "mechanism"),
        (dict(p_mode="clt"), "p_mode"),
        (dict(seed=-1), "seed"),
        (dict(seed=2**64), "seed"),
        (dict(delta_target=0.0), "delta_target"),
        (dict(law=EpsilonLaw("explicit_list", (1.0, 2.0))), "n"),
    ])
    def test_contradictions_name_the_field(self, kwargs, field):
        with pytest.raises(ConfigError) as info:
            config(**kwargs)
        assert info.value.field == field
        assert field in str(info.value)

    def test_build_from_strings(self):
        cfg = build_config({"n": "1e4", "eps_law": "uniform2", "mechanism": "gaussian",
                            "delta_local": "1e-10", "seed": "42", "eps_grid": "0.01:0.1:5"})
        assert cfg.n == 10_000 and cfg.mechanism is MechanismKind.GAUSSIAN
        assert cfg.eps_grid == EpsGrid(0.01, 0.1, 5) and cfg.p_mode is PMode.HYPOTHESIS_TEST

    @pytest.mark.parametrize("values, field", [
        ({"n": "10"}, "eps_law"),
        ({"eps_law": "uniform1"}, "n"),
        ({"n": "ten", "eps_law": "uniform1"}, "n"),
        ({"n": "10", "eps_law": "uniform1", "delta_local": "tiny"}, "delta_local"),
        ({"n": "10", "eps_law": "uniform1", "seed": "1.5"}, "seed"),
    ])
    def test_build_errors(self, values, field):
        with pytest.raises(ConfigError) as info:
            build_config(values)
        assert info.value.field == field

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[experiment]\nn = 100\neps_law = gaussian_clipped:1.5:0.5\nclip = 0.5:2\n"
                        "mechanism = gaussian\ndelta_local = 1e-8\n")
        cfg = build_config(read_config_file(path))
        assert cfg.law.clip == (0.5, 2.0) and cfg.delta_local == 1e-8

    def test_config_file_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            read_config_file(tmp_path / "missing.ini")
        bad = tmp_path / "bad.ini"
        bad.write_text("[other]\nn = 1\n")
        with pytest.raises(ConfigError):
            read_config_file(bad)
        typo = tmp_path / "typo.ini"
        typo.write_text("[experiment]\nn = 1\neps_lwa = uniform1\n")
        with pytest.raises(ConfigError) as info:
            read_config_file(typo)
        assert info.value.field == "eps_lwa"


class TestSampling:
    def test_uniform_clip_and_determinism(self):
        cfg = config(n=5000, law=PRESETS["uniform2"], seed=11)
        a, b = sample_epsilons(cfg), sample_epsilons(cfg)
        assert a.min() >= 0.5 and a.max() <= 2.0
        assert a.tobytes() == b.tobytes()
        assert not np.array_equal(a, sample_epsilons(config(n=5000, law=PRESETS["uniform2"], seed=12)))

    def test_gaussian_clipped_mean(self):
        eps = sample_epsilons(config(n=10_000, law=PRESETS["gauss1"], seed=3))
        assert eps.min() >= 0.05 and eps.max() <= 1.0
        assert abs(eps.mean() - clipped_normal_mean(0.8, 0.5, 0.05, 1.0)) < 0.05
        # clamping piles mass on the upper bound instead of resampling
        assert np.mean(eps == 1.0) > 0.3

    def test_explicit_list_verbatim(self):
        law = EpsilonLaw("explicit_list", (1.0, 2.0, 3.0))
        np.testing.assert_array_equal(sample_epsilons(config(n=3, law=law)), [1.0, 2.0, 3.0])

    def test_generator_is_philox(self):
        # pin the stream: the first uniform(0.5, 2) draws for seed 0
        first = sample_epsilons(config(n=3, law=PRESETS["uniform2"], seed=0))
        rng = np.random.Generator(np.random.Philox(0))
        np.testing.assert_array_equal(first, rng.uniform(0.5, 2.0, 3))


class TestPipeline:
    def test_curve_rows(self):
        cfg = config(eps_grid=EpsGrid(0.01, 1.0, 6))
        table = run_bound_curve(cfg)
        assert len(table.rows) == 6 and table.columns == CSV_COLUMNS
        assert [r["epsilon_s"] for r in table.rows] == pytest.approx(list(np.geomspace(0.01, 1.0, 6)))
        ds = [r["delta_s"] for r in table.rows]
        assert all(b <= a for a, b in zip(ds, ds[1:]))
        assert table.metadata["epsilon1"] and table.metadata["p1"]

    def test_default_grid(self):
        table = run_bound_curve(config(n=20))
        assert len(table.rows) == 64
        assert table.rows[0]["epsilon_s"] == pytest.approx(1e-3)
        assert table.rows[-1]["epsilon_s"] == pytest.approx(float(table.metadata["epsilon1"]))

    def test_rr_mode_uses_baseline(self):
        from pldp_shuffle.clone_probability import baseline_p_rr
        cfg = config(n=40, p_mode="rr_reduction")
        pop = build_population(cfg)
        rest = np.delete(pop.epsilons, pop.worst_index)
        assert pop.probs.p1 == pytest.approx(baseline_p_rr(pop.epsilon1))
        np.testing.assert_allclose(pop.probs.p_rest, [baseline_p_rr(e) for e in rest])

    def test_rr_mode_dominated_on_narrow_law(self):
        # with all epsilons close to the worst user's, the hypothesis-test p
        # exceeds the baseline for every user and the bound improves
        grid = EpsGrid(0.01, 0.9, 8)
        law = EpsilonLaw("uniform", (0.9, 1.0), (0.9, 1.0))
        ht = run_bound_curve(config(n=200, law=law, eps_grid=grid))
        rr = run_bound_curve(config(n=200, law=law, eps_grid=grid, p_mode="rr_reduction"))
        for a, b in zip(ht.rows, rr.rows):
            assert a["delta_s"] <= b["delta_s"]

    def test_single_user(self):
        law = EpsilonLaw("explicit_list", (1.0,))
        table = run_bound_curve(config(n=1, law=law, eps_grid=EpsGrid(0.1, 2.0, 4)))
        w = 0.5 * math.exp(-0.5)
        # with no other users the bound stays at the noise-free floor 1 - 2w
        for row in table.rows:
            assert row["delta_s"] == pytest.approx(1 - 2 * w)

    def test_gaussian_population(self):
        cfg = config(n=30, law=PRESETS["uniform2"], mechanism="gaussian", delta_local=1e-10,
                     eps_grid=EpsGrid(0.05, 1.0, 3))
        pop = build_population(cfg)
        assert pop.delta1 == 1e-10 and pop.epsilon1 == pytest.approx(pop.epsilons.max())
        assert len(run_bound_curve(cfg, pop).rows) == 3

    def test_inverse(self):
        res = run_inverse(config(n=1000, delta_target=1e-5))
        assert res.bound.amplified
        assert res.bound.epsilon < 1.0 and res.ratio < 1.0
        assert res.table.metadata["amplification_ratio"] == repr(res.ratio)

    def test_inverse_needs_target(self):
        with pytest.raises(ConfigError):
            run_inverse(config())

    def test_inverse_target_one(self):
        assert run_inverse(config(delta_target=1.0)).bound.epsilon == 0.0

    def test_clone_profile(self):
        table = run_clone_profile("laplace", 3.0, [0.1, 1.0, 3.0])
        ps = [r["p_i"] for r in table.rows]
        assert ps[1] > ps[0] and ps[2] == 0.0
        assert table.rows[0]["p_rr"] == pytest.approx(1 / (1 + math.exp(0.1)))


class TestEmit:
    def rows(self):
        return [
            {"epsilon_s": 0.01, "delta_s": 1.5e-7, "p_mode": "hypothesis_test", "mechanism": "laplace",
             "n": 10, "seed": 3},
            {"epsilon_s": 0.1, "delta_s": 0.0, "p_mode": "hypothesis_test", "mechanism": "laplace",
             "n": 10, "seed": 3},
        ]

    def test_csv_shape(self):
        text = render(Table(self.rows()))
        lines = text.split("\n")
        assert lines[-1] == "" and "\r" not in text
        assert lines[:-1] == [
            "epsilon_s,delta_s,p_mode,mechanism,n,seed",
            "1.0000000000000000e-02,1.4999999999999999e-07,hypothesis_test,laplace,10,3",
            "1.0000000000000001e-01,0.0000000000000000e+00,hypothesis_test,laplace,10,3",
        ]

    def test_csv_metadata_lines(self):
        text = render(Table(self.rows(), metadata={"n": 10, "p1": "0.3"}))
        assert text.startswith("# n=10\n# p1=0.3\nepsilon_s,")
        assert parse_csv(text) == self.rows()

    def test_json_round_trip(self, tmp_path):
        table = Table(self.rows(), metadata={"seed": 3})
        path = tmp_path / "out.json"
        emit(table, "json", path)
        assert json.loads(path.read_text()) == self.rows()
        assert json.loads((tmp_path / "out.json.meta.json").read_text()) == {"seed": 3}

    def test_empty_refused(self):
        with pytest.raises(ValueError):
            render(Table([]))

    def test_unknown_format(self):
        with pytest.raises(ConfigError):
            render(Table(self.rows()), "xml")

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            emit(Table(self.rows()), "csv", tmp_path / "no" / "such" / "dir.csv")

    def test_byte_identical_runs(self, tmp_path):
        cfg = config(n=300, eps_grid=EpsGrid(0.01, 1.0, 5))
        emit(run_bound_curve(cfg), "csv", tmp_path / "a.csv")
        emit(run_bound_curve(cfg), "csv", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
