import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from bdlim.basis import BasisSet
from bdlim.errors import DispatchError, ParameterError, SamplerStuckError, SeparationError
from bdlim.model import BdlimData, BdlimSpec, Pattern
from bdlim.posterior import effective_sample_size, project_weight_mean, split_rhat
from bdlim.samplers import (
    ChainConfig,
    PosteriorSample,
    conjugate_normal_draw,
    deconvolve_theta_star,
    elliptical_slice,
    ess_constrained,
    fold_direction,
    gibbs_linear_reparam,
    run_chains,
    select_engine,
)
from bdlim.simulation import get_scenario, make_design, simulate_outcome

FAST = ChainConfig(n_iter=1200, n_burnin=600, thin=3)


def spec_for(data, pattern, family="gaussian"):
    return BdlimSpec(pattern=pattern, family=family, n_groups=data.J, covariate_count=data.p)


# ---------------------------------------------------------------- config

def test_chain_config_defaults_and_validation():
    c = ChainConfig()
    assert (c.n_iter, c.n_burnin, c.thin, c.n_draws) == (10000, 5000, 5, 1000)
    assert c.halved() == ChainConfig(5000, 2500, 5)
    for bad in ({"n_iter": 0}, {"n_burnin": 10000}, {"thin": 3}, {"seed": -1}, {"n_chains": 0}):
        with pytest.raises(ParameterError):
            ChainConfig(**bad)


def test_short_chain_warns():
    with pytest.warns(UserWarning, match="stored draws"):
        ChainConfig(100, 50, 1)


# ---------------------------------------------------------------- building blocks

def test_deconvolve_positive_and_negative_scaling():
    colsum = np.array([1.0, 0.5])
    th0 = np.array([0.6, 0.8])
    b, th, flag = deconvolve_theta_star(2.5 * th0, colsum)
    assert (b, flag) == (pytest.approx(2.5), False)
    assert np.allclose(th, th0)
    b, th, _ = deconvolve_theta_star(-2.5 * th0, colsum)
    assert b == pytest.approx(-2.5)
    assert np.allclose(th, th0)


def test_deconvolve_tie_goes_positive():
    colsum = np.array([1.0, -1.0])
    b, th, _ = deconvolve_theta_star(np.array([3.0, 3.0]), colsum)
    assert b > 0 and np.allclose(th, [2 ** -0.5, 2 ** -0.5])


def test_deconvolve_degenerate_draw():
    b, th, flag = deconvolve_theta_star(np.zeros(3), np.array([-1.0, 0.0, 1.0]))
    assert (b, flag) == (0.0, True)
    assert np.array_equal(th, [-1.0, 0.0, 0.0])


vec = arrays(np.float64, 4, elements=st.floats(-5, 5)).filter(lambda v: np.linalg.norm(v) > 1e-6)


@given(vec, vec)
def test_deconvolve_reconstructs(ts, colsum):
    b, th, _ = deconvolve_theta_star(ts, colsum)
    assert np.max(np.abs(b * th - ts)) <= 1e-12
    assert abs(np.linalg.norm(th) - 1) <= 1e-12
    assert colsum @ th >= -1e-12


@given(vec, vec)
def test_fold_direction_lands_on_hemisphere(v, colsum):
    th = fold_direction(v, colsum)
    assert abs(np.linalg.norm(th) - 1) <= 1e-12 and colsum @ th >= -1e-12


def test_elliptical_slice_targets_gaussian_posterior():
    # N(0, 1) reference times N(y; x, s^2) likelihood -> N(y / (1 + s^2), s^2 / (1 + s^2))
    y, s2 = 1.5, 0.5
    rng = np.random.default_rng(0)
    ll = lambda x: -0.5 * (y - x[0]) ** 2 / s2  # noqa: E731
    x, cur = np.zeros(1), None
    draws = []
    for _ in range(30_000):
        x, cur = elliptical_slice(x, ll, rng, cur_ll=cur)
        draws.append(x[0])
    d = np.array(draws[1000:])
    se = d.std() / math.sqrt(effective_sample_size(d))
    assert abs(d.mean() - y / (1 + s2)) < 4 * se
    assert d.var() == pytest.approx(s2 / (1 + s2), rel=0.05)


def test_elliptical_slice_raises_when_stuck():
    with pytest.raises(SamplerStuckError) as err:
        elliptical_slice(np.zeros(2), lambda x: -np.inf, np.random.default_rng(1), cur_ll=0.0,
                         max_shrink=50)
    assert "x" in err.value.state


def test_conjugate_block_matches_closed_form():
    # n = 50, two score columns plus an intercept, flat prior on the intercept
    rng = np.random.default_rng(2)
    D = np.column_stack([np.ones(50), rng.standard_normal((50, 2))])
    y = D @ [1.0, 0.5, -0.3] + rng.standard_normal(50)
    prior = np.array([0.0, 0.25, 0.25])
    s2 = 1.2
    Q = D.T @ D / s2 + np.diag(prior)
    mean = np.linalg.solve(Q, D.T @ y / s2)
    sd = np.sqrt(np.diag(np.linalg.inv(Q)))
    draws = np.array([conjugate_normal_draw(D.T @ D, D.T @ y, s2, prior, rng)
                      for _ in range(10_000)])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * sd / 100)
    assert np.allclose(draws.std(axis=0), sd, rtol=0.05)


# ---------------------------------------------------------------- dispatch

@pytest.mark.parametrize("pattern, family, engine", [
    ("n", "gaussian", "gibbs"), ("bw", "gaussian", "gibbs"), ("b", "gaussian", "ess"),
    ("w", "gaussian", "ess"), ("n", "logit", "ess"), ("bw", "logit", "ess"),
])
def test_select_engine(pattern, family, engine):
    assert select_engine(BdlimSpec(pattern=pattern, family=family, n_groups=2)) == engine


def test_gibbs_rejects_constrained_patterns(small_data):
    with pytest.raises(DispatchError):
        gibbs_linear_reparam(spec_for(small_data, "b"), small_data, FAST)


def test_run_chains_rejects_bad_engine(small_data):
    with pytest.raises(DispatchError):
        run_chains(spec_for(small_data, "b"), small_data, FAST, engine="gibbs")


# ---------------------------------------------------------------- chains

@pytest.mark.parametrize("pattern", ["n", "b", "w", "bw"])
def test_every_stored_theta_is_constrained(small_data, pattern):
    s = run_chains(spec_for(small_data, pattern), small_data, FAST)[0]
    assert s.n_draws == FAST.n_draws
    norms = np.linalg.norm(s.theta, axis=2)
    assert np.max(np.abs(norms - 1)) <= 1e-10
    assert np.min(s.theta @ small_data.basis_colsum) >= -1e-10
    assert np.all(np.isfinite(s.loglik)) and np.all(s.sigma2 > 0)
    for j in range(2):
        assert s.draw(0).shares(pattern)


def test_reparameterized_draws_reconstruct(small_data):
    s = gibbs_linear_reparam(spec_for(small_data, "bw"), small_data, FAST)
    assert np.max(np.abs(s.beta[:, :, None] * s.theta - s.theta_star)) <= 1e-12


def test_logit_constraints_and_separation(small_design):
    d = small_design
    rng = np.random.default_rng(3)
    eta = -0.5 + 0.8 * d["scores"][:, 0] / d["scores"][:, 0].std()
    y = (rng.random(eta.size) < 1 / (1 + np.exp(-eta))).astype(float)
    data = BdlimData(y, d["scores"], d["groups"], d["Z"], d["basis"].column_sums)
    s = run_chains(spec_for(data, "b", "logit"), data, FAST)[0]
    assert s.sigma2 is None
    assert np.max(np.abs(np.linalg.norm(s.theta, axis=2) - 1)) <= 1e-10
    ones = BdlimData(np.ones(y.size), d["scores"], d["groups"], None, d["basis"].column_sums)
    with pytest.raises(SeparationError, match=r"\[chain 0\]"):
        run_chains(BdlimSpec(pattern="b", family="logit", n_groups=2), ones, FAST)


def test_same_seed_same_draws(small_data):
    spec = spec_for(small_data, "b")
    a = run_chains(spec, small_data, FAST)[0]
    b = run_chains(spec, small_data, FAST)[0]
    assert np.array_equal(a.beta, b.beta) and np.array_equal(a.theta, b.theta)


def test_chains_use_consecutive_seeds(small_data):
    spec = spec_for(small_data, "n")
    two = run_chains(spec, small_data, ChainConfig(1200, 600, 3, seed=5, n_chains=2))
    assert [c.chain_id for c in two] == [0, 1]
    assert [c.seed for c in two] == [5, 6]
    again = gibbs_linear_reparam(spec, small_data, ChainConfig(1200, 600, 3, seed=5), chain_id=1)
    assert np.array_equal(two[1].beta, again.beta)
    assert not np.array_equal(two[0].beta, two[1].beta)


def test_parallel_chains_match_serial(small_data):
    spec = spec_for(small_data, "n")
    cfg = ChainConfig(1200, 600, 3, n_chains=2)
    serial = run_chains(spec, small_data, cfg)
    parallel = run_chains(spec, small_data, cfg, n_jobs=2)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.beta, b.beta)


def test_four_chain_rhat(small_data):
    chains = run_chains(spec_for(small_data, "n"), small_data, ChainConfig(2000, 1000, 2, n_chains=4))
    assert split_rhat(np.stack([c.beta[:, 0] for c in chains])) <= 1.05


def test_sample_serialization_round_trip(small_data, tmp_path):
    s = run_chains(spec_for(small_data, "bw"), small_data, FAST)[0]
    back = PosteriorSample.from_json(s.to_json())
    for name in ("alpha", "beta", "theta", "gamma", "sigma2", "loglik", "theta_star"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    assert back.pattern is Pattern.BW and back.group_labels == ("f", "m")
    s.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == s.n_draws + 1
    assert lines[0].split(",")[:4] == ["chain", "iter", "alpha_1", "alpha_2"]
    assert "theta_2_3" in lines[0] and lines[0].endswith("sigma2,loglik")
    pooled = PosteriorSample.pool([s, s])
    assert pooled.n_draws == 2 * s.n_draws


def test_prior_only_recovers_hemisphere(small_data):
    s = ess_constrained(spec_for(small_data, "w"), small_data,
                        ChainConfig(4000, 0, 1), prior_only=True)
    stat = s.theta[:, 0] @ small_data.basis_colsum
    rng = np.random.default_rng(4)
    v = rng.standard_normal((20_000, small_data.K))
    ref = np.abs(v @ small_data.basis_colsum) / np.linalg.norm(v, axis=1)
    assert stats.ks_2samp(stat, ref).pvalue > 0.01


def test_null_effect_intervals_cover_zero():
    rng = np.random.default_rng(5)
    n, T = 150, 10
    Q, _ = np.linalg.qr(rng.standard_normal((T, 3)))
    basis = BasisSet(Q, np.ones(3), 1.0, 3.0)
    covered = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in range(100):
            X = rng.standard_normal((n, T)) * 2
            xi = (X - X.mean(axis=0)) @ Q
            data = BdlimData(rng.standard_normal(n), xi, np.zeros(n), None, basis.column_sums)
            s = gibbs_linear_reparam(BdlimSpec(), data, ChainConfig(600, 200, 4, seed=r))
            lo, hi = np.quantile(s.beta[:, 0], [0.025, 0.975])
            covered += lo < 0 < hi
    assert covered >= 90


def test_flat_weights_recovered():
    sc = get_scenario("A.3")
    design = make_design(sc, np.random.default_rng([0, 0]))
    y = simulate_outcome(sc, design.X, design.Z, design.groups, np.random.default_rng(6))
    data = BdlimData(y, design.scores, design.groups, design.Z, design.basis.column_sums)
    s = gibbs_linear_reparam(spec_for(data, "n"), data, ChainConfig(4000, 2000, 4))
    theta_hat, _ = project_weight_mean(s.theta[:, 0])
    w_hat = design.basis.psi @ theta_hat
    assert np.max(np.abs(w_hat - sc.T ** -0.5)) <= 0.15


def test_failure_keeps_partial_draws(small_data, monkeypatch):
    import bdlim.samplers as samplers

    real = samplers.elliptical_slice
    calls = {"n": 0}

    def failing(*a, **k):
        calls["n"] += 1
        if calls["n"] > 800:
            raise SamplerStuckError("stuck for the test")
        return real(*a, **k)

    monkeypatch.setattr(samplers, "elliptical_slice", failing)
    with pytest.raises(SamplerStuckError) as err:
        run_chains(spec_for(small_data, "b"), small_data, FAST)
    part = err.value.partial
    assert err.value.chain_id == 0 and 0 < part.n_draws < FAST.n_draws
    assert np.all(part.iterations < err.value.state["iteration"])
