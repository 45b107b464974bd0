import csv
import math

import numpy as np
import pytest

from adjointgp import (
    ChainConfig,
    NumericalError,
    batch_means_ess,
    chain_diagnostics,
    chain_to_csv,
    gaussian_log_target,
    posterior_q,
    rw_mh,
    split_rhat,
    tune_proposal_scale,
)


def _std_normal_target(q):
    return -0.5 * float(q @ q)


# ---------------------------------------------------------------------------
# configuration


def test_chain_config_validation():
    ChainConfig(steps=10, burn_in=0, proposal_scale=0.5)
    with pytest.raises(ValueError):
        ChainConfig(steps=0)
    with pytest.raises(ValueError):
        ChainConfig(steps=10, burn_in=10)
    with pytest.raises(ValueError):
        ChainConfig(steps=10, proposal_scale=0.0)
    with pytest.raises(ValueError):
        ChainConfig(steps=10, batch_size=0)


# ---------------------------------------------------------------------------
# sampler correctness


def test_rw_mh_samples_standard_normal():
    cfg = ChainConfig(steps=50000, burn_in=2000, proposal_scale=2.4, seed=0)
    result = rw_mh(_std_normal_target, np.zeros(1), cfg)
    kept = result.kept[:, 0]
    ess, _ = batch_means_ess(kept)
    se = kept.std(ddof=1) / math.sqrt(ess[0])
    assert abs(kept.mean()) < 3 * se
    np.testing.assert_allclose(kept.var(ddof=1), 1.0, rtol=0.10)


def test_rw_mh_matches_conjugate_posterior():
    rng = np.random.default_rng(42)
    design = rng.standard_normal((20, 3))
    z = rng.standard_normal(20)
    sigma = 0.5
    exact = posterior_q(design, z, sigma=sigma)
    target = gaussian_log_target(design, z, sigma)
    scale = tune_proposal_scale(target, exact.mean, seed=1)
    cfg = ChainConfig(steps=60000, burn_in=5000, proposal_scale=scale, seed=2)
    result = rw_mh(target, exact.mean, cfg)
    kept = result.kept
    ess, _ = batch_means_ess(kept)
    sd = kept.std(axis=0, ddof=1)
    se = sd / np.sqrt(ess)
    assert (np.abs(kept.mean(axis=0) - exact.mean) < 3 * se).all()
    np.testing.assert_allclose(sd, np.sqrt(np.diag(exact.cov)), rtol=0.10)


def test_rw_mh_is_reproducible():
    cfg = ChainConfig(steps=200, proposal_scale=1.0, seed=7)
    a = rw_mh(_std_normal_target, np.zeros(2), cfg)
    b = rw_mh(_std_normal_target, np.zeros(2), cfg)
    assert (a.chain == b.chain).all()
    assert (a.accepted_flags == b.accepted_flags).all()


def test_tiny_proposal_accepts_almost_everything():
    cfg = ChainConfig(steps=2000, proposal_scale=1e-6, seed=3)
    result = rw_mh(_std_normal_target, np.zeros(2), cfg)
    assert result.acceptance_rate > 0.99


def test_rw_mh_aborts_when_nothing_is_accepted():
    start = np.zeros(2)

    def spike(q):
        return 0.0 if (q == start).all() else -np.inf

    cfg = ChainConfig(steps=5000, proposal_scale=1.0, seed=4)
    with pytest.raises(NumericalError, match="no proposals accepted"):
        rw_mh(spike, start, cfg)


def test_rw_mh_rejects_bad_start():
    cfg = ChainConfig(steps=10, proposal_scale=1.0)
    with pytest.raises(ValueError, match="start"):
        rw_mh(lambda q: -np.inf, np.zeros(2), cfg)


def test_gaussian_log_target_value_and_validation():
    design = np.array([[1.0, 0.0], [0.0, 2.0]])
    z = np.array([1.0, 1.0])
    target = gaussian_log_target(design, z, 0.5)
    q = np.array([0.5, 0.25])
    resid = z - design @ q
    expected = -resid @ resid / (2 * 0.25) - 0.5 * q @ q
    np.testing.assert_allclose(target(q), expected, rtol=1e-14)
    with pytest.raises(ValueError):
        gaussian_log_target(design, z, 0.0)


# ---------------------------------------------------------------------------
# tuning


def test_tuned_scale_lands_in_acceptance_band():
    scale = tune_proposal_scale(_std_normal_target, np.zeros(3), seed=5)
    cfg = ChainConfig(steps=4000, proposal_scale=scale, seed=6)
    rate = rw_mh(_std_normal_target, np.zeros(3), cfg).acceptance_rate
    assert 0.20 <= rate <= 0.45


# ---------------------------------------------------------------------------
# diagnostics


def test_batch_means_ess_near_n_for_iid_draws():
    rng = np.random.default_rng(8)
    draws = rng.standard_normal((20000, 3))
    ess, degenerate = batch_means_ess(draws)
    assert not degenerate.any()
    assert (ess > 0.8 * 20000).all()
    assert (ess <= 20000).all()


def test_batch_means_ess_flags_constant_chain():
    draws = np.ones((100, 2))
    ess, degenerate = batch_means_ess(draws)
    assert degenerate.all()
    assert (ess == 0.0).all()
    with pytest.raises(ValueError):
        batch_means_ess(np.zeros((3, 1)))


def test_autocorrelated_chain_has_reduced_ess():
    rng = np.random.default_rng(9)
    n, rho = 40000, 0.95
    x = np.empty(n)
    x[0] = 0.0
    noise = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + noise[t]
    ess, _ = batch_means_ess(x)
    # AR(1) factor (1-rho)/(1+rho) ~ 1/39 of the nominal size
    assert ess[0] < 0.1 * n


def test_split_rhat_near_one_for_iid_draws():
    rng = np.random.default_rng(10)
    rhat = split_rhat(rng.standard_normal((20000, 4)))
    np.testing.assert_allclose(rhat, 1.0, atol=0.02)


def test_split_rhat_flags_two_regime_chain():
    rng = np.random.default_rng(11)
    drift = np.concatenate([np.zeros(5000), 5.0 * np.ones(5000)])
    draws = (drift + 0.1 * rng.standard_normal(10000))[:, None]
    assert split_rhat(draws)[0] > 2.0


def test_split_rhat_constant_coordinate_is_one():
    draws = np.column_stack([np.ones(100), np.linspace(0, 1, 100)])
    rhat = split_rhat(draws)
    assert rhat[0] == 1.0


def test_split_rhat_multichain_shape():
    rng = np.random.default_rng(12)
    stacked = rng.standard_normal((4, 5000, 2))
    rhat = split_rhat(stacked)
    assert rhat.shape == (2,)
    np.testing.assert_allclose(rhat, 1.0, atol=0.03)


def test_chain_diagnostics_verdicts():
    cfg = ChainConfig(steps=20000, burn_in=1000, proposal_scale=2.4, seed=13)
    result = rw_mh(_std_normal_target, np.zeros(2), cfg)
    diag = chain_diagnostics(result)
    assert diag.converged
    assert (diag.rhat <= 1.05).all()
    assert not diag.degenerate.any()
    stuck = chain_diagnostics(np.ones((200, 1)))
    assert not stuck.converged
    assert stuck.degenerate.all()


# ---------------------------------------------------------------------------
# persistence


def test_chain_to_csv_round_trip(tmp_path):
    cfg = ChainConfig(steps=50, proposal_scale=1.0, seed=14)
    result = rw_mh(_std_normal_target, np.zeros(2), cfg)
    path = tmp_path / "trace.csv"
    chain_to_csv(result, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "q0", "q1", "log_target", "accepted"]
    assert len(rows) == 51
    body = np.array([[float(c) for c in row] for row in rows[1:]])
    np.testing.assert_array_equal(body[:, 1:3], result.chain)
    np.testing.assert_array_equal(body[:, 3], result.log_targets)
    np.testing.assert_array_equal(body[:, 4], result.accepted_flags.astype(float))
