import numpy as np
import pytest
from scipy.special import ndtr

import probecal as pc
from probecal.diagnostics import Dic3Report, batch_means_se, dic3, psrf_from_chains
from probecal.errors import InsufficientChains, NumericalUnderflow
from probecal.inference import ModelSpec, PosteriorSamples

from conftest import tiny_dataset


# -- potential scale reduction ------------------------------------------------

def test_psrf_constant_chains_convention():
    chains = np.full((3, 100), 2.5)
    assert psrf_from_chains(chains) == (1.0, 1.0)


def test_psrf_iid_chains_near_one():
    rng = np.random.default_rng(1)
    chains = rng.standard_normal((3, 10_000))
    point, upper = psrf_from_chains(chains)
    assert 0.99 < point < 1.05
    assert upper >= point


def test_psrf_separated_chains_large():
    rng = np.random.default_rng(2)
    chains = rng.standard_normal((2, 2000))
    chains[1] += 10.0
    point, _ = psrf_from_chains(chains)
    assert point > 3.0


def test_psrf_affine_invariance():
    rng = np.random.default_rng(3)
    chains = rng.standard_normal((4, 500)) + np.arange(4)[:, None] * 0.1
    p1, u1 = psrf_from_chains(chains)
    p2, u2 = psrf_from_chains(3.7 * chains - 11.0)
    assert p1 == pytest.approx(p2, rel=1e-10)
    assert u1 == pytest.approx(u2, rel=1e-10)


def test_psrf_insufficient_inputs():
    with pytest.raises(InsufficientChains):
        psrf_from_chains(np.zeros((1, 100)))
    with pytest.raises(InsufficientChains):
        psrf_from_chains(np.zeros((3, 5)))


def test_gelman_rubin_wrapper(micro_fit):
    _, samples = micro_fit
    res = pc.gelman_rubin(samples, "sigma_eps")
    assert res.parameter == "sigma_eps"
    assert np.isfinite(res.point) and np.isfinite(res.upper)


# -- batch means ---------------------------------------------------------------

def test_batch_means_iid_scale():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(10_000)
    se = batch_means_se(x, "mean")
    assert 0.007 <= se <= 0.013  # 0.01 within 30%


def test_batch_means_constant_chain():
    assert batch_means_se(np.full(5000, 3.3), "mean") == 0.0
    assert batch_means_se(np.full(5000, 3.3), "quantile", 0.5) == 0.0


def test_batch_means_quantile_variant():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(10_000)
    se = batch_means_se(x, "quantile", 0.5)
    # Median MCSE for iid normal ~ sqrt(pi/2)/sqrt(n) = 0.0125.
    assert 0.008 <= se <= 0.018
    se_custom = batch_means_se(x, functional=lambda b: np.median(b))
    assert se_custom == pytest.approx(se)


def test_batch_means_autocorrelated_exceeds_iid():
    rng = np.random.default_rng(6)
    n, rho = 20_000, 0.9
    eps = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = eps[0]
    for i in range(1, n):
        x[i] = rho * x[i - 1] + eps[i]
    se = batch_means_se(x, "mean")
    naive = x.std() / np.sqrt(n)
    assert se > 2 * naive


def test_batch_means_drops_tail():
    x = np.concatenate([np.zeros(9990), np.full(13, 1e9)])
    b = int(np.sqrt(x.size))
    usable = (x.size // b) * b
    assert usable < x.size  # the huge tail values fall outside full batches
    se = batch_means_se(x[:usable], "mean")
    assert se == batch_means_se(x, "mean") or np.isfinite(se)


# -- DIC3 ----------------------------------------------------------------------

def manual_samples(log_thetas, sigmas):
    """PosteriorSamples with one chain of given site-depth/scale draws."""
    K = len(log_thetas)
    L = len(log_thetas[0])
    scalars = {"mu": np.full((1, K), 1.0), "sigma_b": np.full((1, K), 0.2),
               "sigma_eps": np.full((1, K), 0.3)}
    for e in "ABCS":
        scalars[f"sigma_{e}"] = np.array([[s[e] for s in sigmas]])
    return PosteriorSamples(
        scalars=scalars,
        log_theta=np.array([log_thetas], dtype=np.float32),
        beta={}, alloc={}, examiner_sites={},
        spec=ModelSpec(variant=1), seeds=[[0, 0]], burn_in=0, thin=1)


def manual_cell_prob(u, mean, sd):
    hi = 1.0 if u == 15 else ndtr((np.log(u + 1) - mean) / sd)
    lo = 0.0 if u == 0 else ndtr((np.log(u) - mean) / sd)
    return hi - lo


def test_dic3_single_draw_identity():
    data = tiny_dataset([(2, 3)])
    samples = manual_samples([[0.9]], [dict(A=0.2, B=0.2, C=0.2, S=0.25)])
    rep = dic3(samples, data)
    stored = float(samples.log_theta[0, 0, 0])  # retained draws are float32
    logf = sum(np.log(manual_cell_prob(u, stored, 0.25))
               for u in (2, 3))
    assert rep.expected_deviance == pytest.approx(-4 * logf, abs=1e-10)
    assert rep.plugin == pytest.approx(2 * logf, abs=1e-10)
    assert rep.dic3 == pytest.approx(-2 * logf, abs=1e-10)


def test_dic3_two_observation_hand_computation():
    data = tiny_dataset([(2, 3)])  # one site, examiners S, S
    draws = [[np.log(2.4)], [np.log(3.1)]]
    sigmas = [dict(A=0.2, B=0.2, C=0.2, S=0.3),
              dict(A=0.2, B=0.2, C=0.2, S=0.22)]
    samples = manual_samples(draws, sigmas)
    rep = dic3(samples, data)
    # Hand computation with explicit loops, from the stored (float32) draws.
    stored = [float(samples.log_theta[0, d, 0]) for d in (0, 1)]
    pis = np.array([[manual_cell_prob(u, stored[d], sigmas[d]["S"])
                     for u in (2, 3)] for d in (0, 1)])
    expected_dev = -4 * np.mean([np.log(pis[d]).sum() for d in (0, 1)])
    plugin = 2 * np.log(pis.mean(axis=0)).sum()
    assert rep.expected_deviance == pytest.approx(expected_dev, abs=1e-10)
    assert rep.plugin == pytest.approx(plugin, abs=1e-10)
    assert rep.dic3 == pytest.approx(expected_dev + plugin, abs=1e-10)
    assert rep.dic3 == rep.expected_deviance + rep.plugin


def test_dic3_invariant_to_observation_and_draw_order():
    depths = [(2, 3), (4, 5), (1, 1), (0, 2)]
    data = tiny_dataset(depths)
    rng = np.random.default_rng(7)
    log_thetas = [list(rng.normal(1.0, 0.2, size=4)) for _ in range(5)]
    sigmas = [dict(A=0.2, B=0.25, C=0.21, S=0.3)] * 5
    rep1 = dic3(manual_samples(log_thetas, sigmas), data)
    # Permute sites.
    perm = [2, 0, 3, 1]
    data2 = tiny_dataset([depths[i] for i in perm])
    rep2 = dic3(manual_samples([[lt[i] for i in perm] for lt in log_thetas],
                               sigmas), data2)
    assert rep1.dic3 == pytest.approx(rep2.dic3, abs=1e-9)
    # Permute draws.
    rep3 = dic3(manual_samples(log_thetas[::-1], sigmas[::-1]), data)
    assert rep1.dic3 == pytest.approx(rep3.dic3, abs=1e-9)


def test_dic3_underflow_error():
    data = tiny_dataset([(0, 15)])
    samples = manual_samples([[60.0]], [dict(A=0.2, B=0.2, C=0.2, S=0.01)])
    with pytest.raises(NumericalUnderflow):
        dic3(samples, data)


def test_dic3_report_json():
    rep = Dic3Report(2, 10.0, -4.0, 6.0)
    assert rep.to_json() == {"variant": 2, "expected_deviance": 10.0,
                             "plugin": -4.0, "dic3": 6.0}
