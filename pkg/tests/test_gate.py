"""Uncertainty loss, weighted objective, and exit decisions."""

import numpy as np
import pytest

from cascade_denoiser.errors import ParameterError
from cascade_denoiser.gate import (ExitPolicy, GateDecision, compute_savings,
                                   decide_exit, eu_loss, total_loss)
from cascade_denoiser.tensor import Tensor, grad_check


def test_eu_loss_zero_residual_unit_variance():
    g = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 4, 4)))
    u = Tensor(np.zeros((1, 4, 4)))  # sigma^2 = 1
    assert eu_loss(g, Tensor(g.data.copy()), u).item() == pytest.approx(0.0, abs=1e-15)


def test_eu_loss_single_pixel_half():
    s = Tensor(np.array(1.0).reshape(1, 1, 1))
    g = Tensor(np.array(0.0).reshape(1, 1, 1))
    u = Tensor(np.zeros((1, 1, 1)))
    assert eu_loss(s, g, u).item() == pytest.approx(0.5, abs=1e-12)


def test_eu_loss_minimized_at_residual_norm():
    # analytic stationary point of r/(2v) + ln(v)/2 is v = r
    r = 0.37
    s = Tensor(np.array(r).reshape(1, 1, 1))
    g = Tensor(np.zeros((1, 1, 1)))
    grid = np.linspace(0.05, 1.5, 2000)
    losses = [eu_loss(s, g, Tensor(np.log(np.array(v)).reshape(1, 1, 1))).item()
              for v in grid]
    v_star = grid[int(np.argmin(losses))]
    assert abs(v_star - r) / r < 0.01


def test_eu_loss_laplace_form():
    # canonical form |r|/sigma + ln sigma, here with r=1, sigma=1 -> 1.0
    s = Tensor(np.array(1.0).reshape(1, 1, 1))
    g = Tensor(np.zeros((1, 1, 1)))
    u = Tensor(np.zeros((1, 1, 1)))
    assert eu_loss(s, g, u, form="laplace").item() == pytest.approx(1.0, abs=1e-12)


def test_eu_loss_gradients():
    rng = np.random.default_rng(1)
    s = Tensor(rng.uniform(0, 1, (2, 5, 5)))
    g = Tensor(rng.uniform(0, 1, (2, 5, 5)))
    u = Tensor(rng.uniform(-1, 1, (1, 5, 5)))
    for form in ("printed", "laplace"):
        rep = grad_check(lambda ss, uu: eu_loss(ss, g, uu, form=form), [s, u],
                         tol=1e-3)
        assert rep.passed, f"{form}: max rel err {rep.max_rel_err}"


def test_eu_loss_validation():
    s = Tensor(np.zeros((1, 4, 4)))
    with pytest.raises(Exception):
        eu_loss(s, Tensor(np.zeros((1, 5, 5))), Tensor(np.zeros((1, 4, 4))))
    with pytest.raises(ParameterError):
        eu_loss(s, s, Tensor(np.zeros((1, 4, 4))), form="gauss")


def test_total_loss_gamma_one_is_plain_sum():
    losses = [1.0, 2.0, 3.0]
    assert total_loss(losses, 1.0).item() == pytest.approx(6.0)


def test_total_loss_direct_weighted_sum():
    # N=2, losses [1,1], gamma 0.8 -> 0.8 + 1.0
    assert total_loss([1.0, 1.0], 0.8, max_iters=2).item() == pytest.approx(1.8)


def test_total_loss_single_entry_uses_configured_cap():
    val = total_loss([2.0], 0.5, max_iters=4).item()
    assert val == pytest.approx(0.5 ** 3 * 2.0)


def test_total_loss_matches_direct_oracle():
    rng = np.random.default_rng(2)
    losses = list(rng.uniform(0, 2, 6))
    gamma = 0.8
    n = 6
    oracle = sum(gamma ** (n - k) * losses[k - 1] for k in range(1, n + 1))
    assert total_loss(losses, gamma, max_iters=n).item() == pytest.approx(oracle,
                                                                          rel=1e-15)


def test_total_loss_monotone_in_components():
    base = [0.5, 0.5, 0.5]
    ref = total_loss(base, 0.8).item()
    for k in range(3):
        bumped = list(base)
        bumped[k] += 0.1
        assert total_loss(bumped, 0.8).item() > ref


def test_total_loss_validation():
    with pytest.raises(ParameterError):
        total_loss([], 0.8)
    with pytest.raises(ParameterError):
        total_loss([1.0], 1.5)
    with pytest.raises(ParameterError):
        total_loss([1.0, 1.0], 0.8, max_iters=1)


def _umap(sigma2):
    return Tensor(np.full((1, 4, 4), np.log(sigma2)))


def test_decide_exit_low_uncertainty_exits():
    policy = ExitPolicy(enabled=True, threshold=0.002, max_iters=12)
    d = decide_exit(_umap(0.001), policy, 3)
    assert d.exit and d.iteration == 3
    assert d.mean_uncertainty == pytest.approx(0.001, rel=1e-12)


def test_decide_exit_cap_at_max_iters():
    policy = ExitPolicy(enabled=True, threshold=0.002, max_iters=5)
    assert decide_exit(_umap(10.0), policy, 5).exit


def test_decide_exit_disabled_never_exits_early():
    policy = ExitPolicy(enabled=False, threshold=0.002, max_iters=8)
    assert not decide_exit(_umap(1e-9), policy, 3).exit
    assert decide_exit(_umap(1e-9), policy, 8).exit


def test_decide_exit_monotone_in_uncertainty():
    policy = ExitPolicy(enabled=True, threshold=0.01, max_iters=10)
    exited = False
    for sigma2 in (1.0, 0.1, 0.02, 0.009, 0.001, 1e-6):
        d = decide_exit(_umap(sigma2), policy, 2)
        if exited:
            assert d.exit  # lowering uncertainty never flips exit back
        exited = d.exit
    assert exited


def test_decide_exit_polarity_flag():
    policy = ExitPolicy(enabled=True, threshold=0.5, max_iters=10, exit_on_low=False)
    assert decide_exit(_umap(2.0), policy, 1).exit
    assert not decide_exit(_umap(0.1), policy, 1).exit


def test_decide_exit_threshold_zero_never_exits_early():
    policy = ExitPolicy(enabled=True, threshold=0.0, max_iters=6)
    assert not decide_exit(_umap(1e-30), policy, 2).exit


def test_compute_savings():
    mk = lambda it: GateDecision(mean_uncertainty=0.0, exit=True, iteration=it)
    assert compute_savings([mk(12)] * 5, 12) == pytest.approx(0.0)
    assert compute_savings([mk(1)] * 3, 12) == pytest.approx(11 / 12)
    # mean exit 9.4 of 12 -> about 21.7% saved
    decisions = [mk(9), mk(9), mk(9), mk(10), mk(10)]
    assert compute_savings(decisions, 12) == pytest.approx(1 - 9.4 / 12, abs=1e-12)
    with pytest.raises(ParameterError):
        compute_savings([], 12)


def test_policy_validation():
    with pytest.raises(ParameterError):
        ExitPolicy(threshold=-0.1)
    with pytest.raises(ParameterError):
        ExitPolicy(max_iters=0)
