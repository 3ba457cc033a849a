import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jensen_fsim.basis import eval_basis
from jensen_fsim.errors import InvalidArgumentError
from jensen_fsim.fsim import fit_fsim, make_fsim_bases, trapezoid_weights
from jensen_fsim.simgen import (
    CURVATURE_C,
    LINK_NAMES,
    LinkSpec,
    StudyConfig,
    curvature_demo,
    fsim_true_coefficients,
    gen_appendixA_data,
    gen_fsim_data,
    gen_sim_data,
    log_grid,
    parse_range,
    rase_k,
    rse,
    run_power_curve,
    run_rejection_study,
)


class TestLinks:
    @pytest.mark.parametrize("name", LINK_NAMES)
    def test_derivatives_match_differences(self, name):
        g = LinkSpec(name, 0.7)
        s = np.linspace(-1.5, 1.5, 13)
        h = 1e-5
        for k in (1, 2):
            fd = (g(s + h, k - 1) - g(s - h, k - 1)) / (2 * h)
            assert np.allclose(g(s, k), fd, atol=1e-6)

    def test_known_values(self):
        s = np.array([-1.0, 0.0, 2.0])
        assert np.allclose(LinkSpec("exp_pos")(s), np.exp(s))
        assert np.allclose(LinkSpec("neg_square")(s, 2), -2.0)
        assert np.allclose(LinkSpec("power_family", 0.0)(s), s)
        assert np.allclose(LinkSpec("power_family", 0.5)(s, 2), 0.5 * np.exp(-s))

    def test_unknown(self):
        with pytest.raises(InvalidArgumentError):
            LinkSpec("cubic")

    def test_label(self):
        assert LinkSpec("power_family", 0.3).label == "power_family(eta=0.3)"
        assert LinkSpec("linear").label == "linear"


class TestSimDesign:
    def test_beta_unit_norm(self):
        d = gen_sim_data(50, LinkSpec("linear"), 0.1, 0)
        assert abs(np.linalg.norm(d.beta) - 1.0) < 1e-15
        assert d.X.shape == (50, 5)

    def test_noiseless_linear_is_index(self):
        d = gen_sim_data(80, LinkSpec("linear"), 0.0, 4)
        assert np.array_equal(d.Y, d.E)
        assert np.allclose(d.E, d.X @ d.beta, atol=0)

    @given(st.integers(0, 10_000))
    def test_index_bound(self, seed):
        d = gen_sim_data(200, LinkSpec("exp_pos"), 0.1, seed)
        assert np.all(np.abs(d.E) <= math.sqrt(5) / 2)
        assert np.all(np.abs(d.X) <= 0.5)

    def test_seed_determinism(self):
        a = gen_sim_data(30, LinkSpec("exp_pos"), 0.1, 11)
        b = gen_sim_data(30, LinkSpec("exp_pos"), 0.1, 11)
        c = gen_sim_data(30, LinkSpec("exp_pos"), 0.1, 12)
        assert np.array_equal(a.Y, b.Y) and not np.array_equal(a.Y, c.Y)

    def test_bad_n(self):
        with pytest.raises(InvalidArgumentError):
            gen_sim_data(0, LinkSpec("linear"), 0.1, 0)


class TestFsimDesign:
    def test_xi_moments(self):
        d = gen_fsim_data(10_000, LinkSpec("linear"), 0.1, 0)
        var = d.xi.var(axis=0)
        for i in (1, 13, 25):
            target = math.exp(-(i - 1) / 12)
            assert abs(var[i - 1] / target - 1) < 0.10
        assert abs(math.exp(-24 / 12) - 0.1353) < 1e-4

    def test_shapes_and_beta_norm(self):
        d = gen_fsim_data(20, LinkSpec("exp_pos"), 0.1, 1)
        t = d.dataset.t_grid
        assert t.size == 201 and t[0] == 0.0 and t[-1] == 1.0
        assert d.dataset.X.shape == (20, 201)
        beta = eval_basis(d.beta_basis, t) @ d.c_true
        w = trapezoid_weights(t)
        assert abs(math.sqrt(w @ beta**2) - 1) < 1e-6
        assert abs(np.linalg.norm(fsim_true_coefficients()) - 1) < 1e-12

    def test_printed_direction(self):
        c = fsim_true_coefficients()
        assert np.allclose(c[:4] * 1.5, [0, 1, 1, 0.5])
        assert np.all(c[4:] == 0)

    def test_index_matches_quadrature(self):
        d = gen_fsim_data(15, LinkSpec("linear"), 0.0, 2)
        t = d.dataset.t_grid
        beta = eval_basis(d.beta_basis, t) @ d.c_true
        quad = d.dataset.X @ (trapezoid_weights(t) * beta)
        assert np.max(np.abs(quad - d.index)) < 1e-3
        assert np.array_equal(d.dataset.Y, d.index)

    def test_noiseless_recovery(self):
        d = gen_fsim_data(100, LinkSpec("exp_pos"), 0.0, 5)
        bases = make_fsim_bases(d.dataset, d.beta_basis)
        fit = fit_fsim(d.dataset, bases, 1e-8, 1e-8)
        assert abs(np.corrcoef(fit.index, d.index)[0, 1]) > 0.99


class TestCurvatureDesign:
    def test_coefficients_unit_norm(self):
        assert abs(sum(v * v for v in CURVATURE_C) - 1.0) < 1e-15
        d = gen_appendixA_data(10, LinkSpec("exp_neg"), 0)
        assert abs(np.linalg.norm(d.c_true) - 1.0) < 1e-15

    def test_noise_variance_definition(self):
        d = gen_appendixA_data(100, LinkSpec("exp_neg"), 3)
        g = LinkSpec("exp_neg")(d.index)
        assert abs(d.noise_var - 0.1 * np.var(g)) <= 1e-12 * max(1.0, d.noise_var)

    def test_mean_curve(self):
        d = gen_appendixA_data(10_000, LinkSpec("exp_neg"), 0)
        t = d.dataset.t_grid
        assert np.max(np.abs(d.dataset.X.mean(axis=0) - t)) < 0.05

    def test_harmonics_orthonormal(self):
        d = gen_appendixA_data(10, LinkSpec("exp_neg"), 0)
        t = d.dataset.t_grid
        H = eval_basis(d.beta_basis, t)[:, 1:5]
        G = H.T @ (trapezoid_weights(t)[:, None] * H)
        assert np.allclose(G, np.eye(4), atol=1e-10)
        r2 = math.sqrt(2)
        assert np.allclose(H[:, 0], r2 * np.sin(2 * np.pi * t), atol=1e-12)
        assert np.allclose(H[:, 3], r2 * np.cos(4 * np.pi * t), atol=1e-12)

    def test_index_matches_quadrature(self):
        d = gen_appendixA_data(12, LinkSpec("exp_neg"), 1)
        t = d.dataset.t_grid
        beta = eval_basis(d.beta_basis, t) @ d.c_true
        quad = d.dataset.X @ (trapezoid_weights(t) * beta)
        assert np.max(np.abs(quad - d.index)) < 1e-3

    def test_needs_two(self):
        with pytest.raises(InvalidArgumentError):
            gen_appendixA_data(1, LinkSpec("exp_neg"), 0)


class TestMetrics:
    def test_rse_identity_and_sign(self):
        t = np.linspace(0, 1, 201)
        b = np.sin(3 * t) + t
        assert rse(b, b, t) == 0.0
        assert rse(-b, b, t) == 0.0

    def test_rse_value(self):
        t = np.linspace(0, 1, 101)
        assert abs(rse(np.ones_like(t) * 3, np.ones_like(t), t) - 2.0) < 1e-12

    def test_rase_exact_link(self):
        class Stub:
            S_range = 10.0
            index = np.linspace(-1, 1, 7)

            @staticmethod
            def g(s, k=0):
                return LinkSpec("exp_neg")(s, k)

        for k in (0, 1, 2):
            assert rase_k(Stub, LinkSpec("exp_neg"), Stub.index, k) == 0.0
        shifted = rase_k(Stub, LinkSpec("exp_neg"), Stub.index + 0.1, 0)
        oracle = np.sqrt(np.mean((np.exp(-Stub.index) - np.exp(-Stub.index - 0.1)) ** 2))
        assert abs(shifted - oracle) < 1e-14
        with pytest.raises(InvalidArgumentError):
            rase_k(Stub, LinkSpec("exp_neg"), Stub.index, 3)


class TestParseRange:
    @pytest.mark.parametrize("text,expected", [
        ("0:1.2:0.2", [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2]),
        ("0:0.8:0.2", [0.0, 0.2, 0.4, 0.6, 0.8]),
        ("0.5", [0.5]),
        ("0, 0.3,0.9", [0.0, 0.3, 0.9]),
        ("", []),
        ("1:0:0.1", []),
    ])
    def test_examples(self, text, expected):
        assert parse_range(text) == expected

    def test_bad_step(self):
        with pytest.raises(InvalidArgumentError):
            parse_range("0:1:0")

    def test_log_grid(self):
        assert np.allclose(log_grid((-2, 2, 5)), [0.01, 0.1, 1, 10, 100])
        with pytest.raises(InvalidArgumentError):
            log_grid((0, 1, 0))


class TestStudyConfig:
    def test_round_trip(self):
        cfg = StudyConfig("fsim", n=50, link=LinkSpec("power_family", 0.4), n_reps=3,
                          log10_lambda_g=(-4.0, 0.0, 3))
        back = StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg

    @pytest.mark.parametrize("kw", [{"design": "other"}, {"n_reps": 0}, {"sigma": -0.1}, {"n": 5}])
    def test_invalid(self, kw):
        args = {"design": "sim", **kw}
        with pytest.raises(InvalidArgumentError):
            StudyConfig(**args)


SMALL = StudyConfig("sim", n_reps=6, n_null_draws=1000, base_seed=40)


class TestStudies:
    def test_deterministic(self):
        a = run_rejection_study(SMALL)
        b = run_rejection_study(SMALL)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        assert [r["seed"] for r in a.per_seed] == list(range(40, 46))

    def test_parallel_matches_serial(self):
        a = run_rejection_study(SMALL)
        b = run_rejection_study(SMALL, jobs=2)
        assert a.per_seed == b.per_seed and a.rate == b.rate

    def test_strong_convexity_rejects(self):
        res = run_rejection_study(replace(SMALL, link=LinkSpec("exp_pos")))
        assert res.rate == 1.0 and res.n_failed == 0

    def test_noiseless_linear_never_rejects(self):
        # every lambda is large enough that each fit is the least-squares line
        cfg = replace(SMALL, link=LinkSpec("linear"), sigma=0.0, log10_lambda=(6.0, 8.0, 3))
        res = run_rejection_study(cfg)
        assert res.rate == 0.0 and res.n_failed == 0

    def test_power_curve_rows(self):
        rows, studies = run_power_curve(replace(SMALL, n_reps=2), [0.0, 1.2])
        assert [r["eta"] for r in rows] == [0.0, 1.2]
        assert set(rows[0]) == {"eta", "rate", "n_reps", "n", "sigma"}
        assert studies[1].config.link == LinkSpec("power_family", 1.2)

    @pytest.mark.parametrize("grid", [[], [0.5, 0.2]])
    def test_power_curve_bad_grid(self, grid):
        with pytest.raises(InvalidArgumentError):
            run_power_curve(SMALL, grid)


class TestCurvatureDemo:
    def test_report(self):
        rep = curvature_demo()
        assert json.loads(json.dumps(rep)) == rep
        for fit in rep["fits"].values():
            assert abs(fit["c_norm"] - 1.0) < 1e-8
            assert fit["RSE"] >= 0 and fit["RASE0"] < fit["RASE2"]
        assert rep["sup_diff_g2"] > 0


class TestPowerProperties:
    def test_power_grows_with_n(self):
        base = StudyConfig("sim", link=LinkSpec("power_family", 0.6), n_reps=200)
        r100 = run_rejection_study(base).rate
        r200 = run_rejection_study(replace(base, n=200)).rate
        slack = 2 * math.sqrt(r100 * (1 - r100) / 200)
        assert r200 >= r100 - slack
