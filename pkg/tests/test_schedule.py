import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motiondiff.schedule import cosine_schedule


def closed_form_alpha_bar(T, s=0.008):
    f = lambda t: np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2  # noqa: E731
    return f(np.arange(T + 1)) / f(0)


@pytest.mark.parametrize("T", [1, 5, 50, 200, 1000])
def test_alpha_bar_basics(T):
    sch = cosine_schedule(T)
    assert sch.alpha_bar[0] == 1.0
    assert np.all(np.diff(sch.alpha_bar) < 0)
    assert np.all((sch.alpha[1:] > 0) & (sch.alpha[1:] <= 1))
    assert np.all(1 - sch.alpha[1:] <= 0.999 + 1e-15)
    assert sch.var[1] == 0.0
    for arr in (sch.c0, sch.c1, sch.var):
        assert np.all(np.isfinite(arr[1:])) and np.all(arr[1:] >= 0)
    assert sch.var[T] < 1


def test_matches_closed_form_where_unclipped():
    sch = cosine_schedule(200)
    ref = closed_form_alpha_bar(200)
    np.testing.assert_allclose(sch.alpha_bar[:200], ref[:200], rtol=1e-12)
    assert sch.alpha_bar[200] <= 1e-3
    assert ref[200] <= 1e-3


def test_bad_T():
    with pytest.raises(ValueError):
        cosine_schedule(0)


def test_corrupt_edges():
    sch = cosine_schedule(200)
    x0 = np.random.default_rng(0).normal(size=(4, 3))
    n = np.random.default_rng(1).normal(size=(4, 3))
    np.testing.assert_array_equal(sch.corrupt(x0, 0, n), x0)
    np.testing.assert_allclose(sch.corrupt(np.zeros_like(n), 37, n), np.sqrt(1 - sch.alpha_bar[37]) * n, atol=0)
    for t in (-1, 201):
        with pytest.raises(ValueError):
            sch.corrupt(x0, t, n)
    with pytest.raises(ValueError):
        sch.posterior_sample(x0, x0, 0, np.random.default_rng(0))


@pytest.mark.parametrize("t", [1, 10, 100, 200])
def test_marginal_matches_iterated_chain(t):
    sch = cosine_schedule(200)
    r = np.random.default_rng(t)
    M = 100_000
    x0 = 0.7
    direct = sch.corrupt(np.full(M, x0), t, r.standard_normal(M))
    chain = np.full(M, x0)
    for k in range(1, t + 1):
        chain = sch.corrupt_step(chain, k, r.standard_normal(M))
    mean, var = np.sqrt(sch.alpha_bar[t]) * x0, 1 - sch.alpha_bar[t]
    se_mean = np.sqrt(var / M)
    se_var = var * np.sqrt(2 / (M - 1))
    for x in (direct, chain):
        assert abs(x.mean() - mean) <= 3 * se_mean
        assert abs(x.var() - var) <= 3 * se_var + 1e-15
    assert abs(direct.mean() - chain.mean()) <= 3 * np.sqrt(2) * se_mean


def test_t1_posterior_is_x0_hat():
    sch = cosine_schedule(200)
    x_t = np.random.default_rng(0).normal(size=5)
    x0 = np.random.default_rng(1).normal(size=5)
    r = np.random.default_rng(2)
    state = r.bit_generator.state
    np.testing.assert_allclose(sch.posterior_sample(x_t, x0, 1, r), x0, atol=1e-15)
    assert r.bit_generator.state == state


def grid_posterior(sch, x0, x_t, t):
    """Bayes rule on a grid: prior q(x_{t-1}|x0) times likelihood q(x_t|x_{t-1})."""
    ab_prev, a = sch.alpha_bar[t - 1], sch.alpha[t]
    m, s = np.sqrt(ab_prev) * x0, np.sqrt(1 - ab_prev)
    ml, sl = x_t / np.sqrt(a), np.sqrt((1 - a) / a)

    def logp(g):
        return -0.5 * ((g - m) / s) ** 2 - 0.5 * (x_t - np.sqrt(a) * g) ** 2 / (1 - a)

    # a coarse pass over both bulks locates the mode, so improbable x_t stay covered;
    # the product is no wider than the narrower factor, which bounds the fine window
    coarse = np.linspace(min(m - 12 * s, ml - 12 * sl), max(m + 12 * s, ml + 12 * sl), 200_001)
    mode = coarse[np.argmax(logp(coarse))]
    width = min(s, sl)
    g = np.linspace(mode - 20 * width, mode + 20 * width, 40_001)
    lp = logp(g)
    w = np.exp(lp - lp.max())
    w /= w.sum()
    mu = (w * g).sum()
    return mu, (w * (g - mu) ** 2).sum()


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 200), st.floats(-2, 2), st.floats(-3, 3))
def test_posterior_matches_grid_oracle(t, x0, x_t):
    sch = cosine_schedule(200)
    mean, var = sch.posterior_mean_var(np.array(x_t), np.array(x0), t)
    ref_mean, ref_var = grid_posterior(sch, x0, x_t, t)
    assert float(mean) == pytest.approx(ref_mean, abs=1e-6)
    assert var == pytest.approx(ref_var, abs=1e-6)


@pytest.mark.parametrize("t", [2, 50, 199])
def test_posterior_mean_consistent_with_marginal(t):
    sch = cosine_schedule(200)
    r = np.random.default_rng(t)
    M = 100_000
    x0 = -0.4
    x_t = sch.corrupt(np.full(M, x0), t, r.standard_normal(M))
    prev = sch.posterior_sample(x_t, np.full(M, x0), t, r)
    mean, var = np.sqrt(sch.alpha_bar[t - 1]) * x0, 1 - sch.alpha_bar[t - 1]
    assert abs(prev.mean() - mean) <= 3 * np.sqrt(var / M)
    assert abs(prev.var() - var) <= 3 * var * np.sqrt(2 / (M - 1))


def test_oracle_denoiser_reconstructs():
    sch = cosine_schedule(200)
    r = np.random.default_rng(7)
    M = 50_000
    x0 = 1.3
    x = r.standard_normal(M)
    for t in range(200, 0, -1):
        if t == 100:
            mid = x.copy()
        x = sch.posterior_sample(x, np.full(M, x0), t, r)
    np.testing.assert_allclose(x, x0, atol=1e-12)
    # halfway through, samples follow q(x_100 | x0)
    mean, var = np.sqrt(sch.alpha_bar[100]) * x0, 1 - sch.alpha_bar[100]
    assert abs(mid.mean() - mean) <= 3 * np.sqrt(var / M) + 0.01
    assert abs(mid.var() - var) <= 0.02


def test_csv_dump():
    text = cosine_schedule(3).to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "t,alpha,alpha_bar,var"
    assert len(lines) == 5
    assert lines[1] == "0,1.0,1.0,0.0"
    assert "np.float64" not in text
    sch = cosine_schedule(3)
    row = lines[2].split(",")
    assert float(row[2]) == sch.alpha_bar[1]
