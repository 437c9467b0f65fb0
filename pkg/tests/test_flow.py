"""Correlation pyramid, lookup and GRU update against direct oracles."""

import numpy as np
import pytest

from cascade_denoiser.errors import DimensionError, ParameterError
from cascade_denoiser.flow import (CorrelationPyramid, FlowField, GruState,
                                   build_corr_pyramid, encode_context,
                                   encode_features, gru_update, lookup,
                                   refine_flow)
from cascade_denoiser.tensor import Tensor, grad_check
from conftest import random_triplet


def rand_feat(D, h, w, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal((D, h, w)))


# -- encoders --------------------------------------------------------------------

def test_encode_features_shape_and_determinism(tiny_cfg, tiny_params):
    p = tiny_cfg.patch_size
    pre = Tensor(np.random.default_rng(0).uniform(0, 1, (1, p, p)))
    noisy = Tensor(np.random.default_rng(1).uniform(0, 1, (1, p, p)))
    a = encode_features(pre, noisy, tiny_params, tiny_cfg)
    b = encode_features(pre, noisy, tiny_params, tiny_cfg)
    assert a.shape == (tiny_cfg.feat_channels, p // 2, p // 2)
    np.testing.assert_array_equal(a.data, b.data)


def test_encode_context_shape(tiny_cfg, tiny_params):
    p = tiny_cfg.patch_size
    ref = Tensor(np.random.default_rng(2).uniform(0, 1, (1, p, p)))
    out = encode_context(ref, tiny_params, tiny_cfg)
    assert out.shape == (tiny_cfg.context_channels, p // 2, p // 2)


def test_encoder_gradients(tiny_cfg, tiny_params):
    p = tiny_cfg.patch_size
    pre = Tensor(np.random.default_rng(3).uniform(0, 1, (1, p, p)))
    noisy = Tensor(np.random.default_rng(4).uniform(0, 1, (1, p, p)))
    rep = grad_check(lambda a, b: encode_features(a, b, tiny_params, tiny_cfg),
                     [pre, noisy], tol=1e-3, max_entries=24)
    assert rep.passed, f"max rel err {rep.max_rel_err}"
    rep = grad_check(lambda a: encode_context(a, tiny_params, tiny_cfg),
                     [pre], tol=1e-3, max_entries=24)
    assert rep.passed, f"max rel err {rep.max_rel_err}"


# -- correlation pyramid -----------------------------------------------------------

def _corr_oracle(f1, f2):
    D, h, w = f1.shape
    out = np.zeros((h, w, h, w))
    for i in range(h):
        for j in range(w):
            for k in range(h):
                for l in range(w):
                    out[i, j, k, l] = float((f1[:, i, j] * f2[:, k, l]).sum())
    return out


def test_corr_pyramid_matches_quadruple_loop():
    f1 = rand_feat(3, 8, 8, seed=5)
    f2 = rand_feat(3, 8, 8, seed=6)
    pyr = build_corr_pyramid(f1, f2)
    oracle = _corr_oracle(f1.data, f2.data)
    got = pyr.levels[0].data.reshape(8, 8, 8, 8)
    np.testing.assert_allclose(got, oracle, rtol=1e-10, atol=1e-12)


def test_corr_pyramid_level_shapes():
    pyr = build_corr_pyramid(rand_feat(4, 8, 8, seed=7), rand_feat(4, 8, 8, seed=8))
    assert [lv.shape for lv in pyr.levels] == [
        (64, 1, 8, 8), (64, 1, 4, 4), (64, 1, 2, 2), (64, 1, 1, 1)]


def test_corr_all_ones_features():
    f = Tensor(np.ones((4, 8, 8)))
    pyr = build_corr_pyramid(f, f)
    np.testing.assert_allclose(pyr.levels[0].data, 4.0, rtol=1e-14)


def test_corr_diagonal_maximal_for_unit_norm_distinct():
    rng = np.random.default_rng(9)
    f = rng.standard_normal((6, 8, 8))
    f /= np.linalg.norm(f, axis=0, keepdims=True)
    pyr = build_corr_pyramid(Tensor(f), Tensor(f.copy()))
    vol = pyr.levels[0].data.reshape(64, 64)
    for i in range(64):
        assert vol[i, i] == pytest.approx(vol[i].max())


def test_corr_symmetry_under_swap():
    f1 = rand_feat(3, 8, 8, seed=10)
    f2 = rand_feat(3, 8, 8, seed=11)
    a = build_corr_pyramid(f1, f2).levels[0].data.reshape(64, 64)
    b = build_corr_pyramid(f2, f1).levels[0].data.reshape(64, 64)
    np.testing.assert_allclose(a, b.T, atol=1e-12)


def test_corr_mismatch_errors():
    with pytest.raises(DimensionError):
        build_corr_pyramid(rand_feat(3, 4, 4), rand_feat(3, 8, 8))


# -- lookup -------------------------------------------------------------------------

def test_lookup_channel_count():
    pyr = build_corr_pyramid(rand_feat(3, 8, 8, seed=12), rand_feat(3, 8, 8, seed=13))
    out = lookup(pyr, Tensor(np.zeros((2, 8, 8))), radius=3)
    assert out.shape == (49 * 4, 8, 8)


def test_lookup_zero_flow_center_is_self_correlation():
    f = rand_feat(4, 8, 8, seed=14)
    pyr = build_corr_pyramid(f, f)
    out = lookup(pyr, Tensor(np.zeros((2, 8, 8))), radius=2)
    n = 5
    center_channel = (n * n) // 2  # level-1 block leads, its center channel
    self_corr = (f.data ** 2).sum(axis=0)
    np.testing.assert_allclose(out.data[center_channel], self_corr, rtol=1e-12)


def test_lookup_integer_flow_matches_direct_indexing():
    h = w = 8
    r = 2
    f1 = rand_feat(3, h, w, seed=15)
    f2 = rand_feat(3, h, w, seed=16)
    pyr = build_corr_pyramid(f1, f2)
    rng = np.random.default_rng(17)
    flow = Tensor(rng.integers(-2, 3, (2, h, w)).astype(np.float64))
    out = lookup(pyr, flow, radius=r).data
    n = 2 * r + 1
    vol0 = pyr.levels[0].data.reshape(h, w, h, w)
    for i in range(h):
        for j in range(w):
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    ty = int(np.clip(i + flow.data[1, i, j] + dy, 0, h - 1))
                    tx = int(np.clip(j + flow.data[0, i, j] + dx, 0, w - 1))
                    ch = (dy + r) * n + (dx + r)
                    assert out[ch, i, j] == pytest.approx(vol0[i, j, ty, tx], abs=1e-12)


def test_lookup_radius_validation():
    pyr = build_corr_pyramid(rand_feat(2, 8, 8), rand_feat(2, 8, 8))
    with pytest.raises(ParameterError):
        lookup(pyr, Tensor(np.zeros((2, 8, 8))), radius=0)


# -- GRU update ----------------------------------------------------------------------

def _gru_inputs(cfg, params, seed=18):
    rng = np.random.default_rng(seed)
    h = w = cfg.flow_grid
    xin = (2 * cfg.lookup_radius + 1) ** 2 * 4 + 2 + cfg.context_channels
    state = GruState(h=Tensor(np.tanh(rng.standard_normal((cfg.hidden_channels, h, w)))),
                     context=Tensor(rng.standard_normal((cfg.context_channels, h, w))))
    x_t = Tensor(rng.standard_normal((xin, h, w)))
    return state, x_t


def test_gru_activation_ranges(tiny_cfg, tiny_params):
    state, x_t = _gru_inputs(tiny_cfg, tiny_params)
    new, delta = gru_update(state, x_t, tiny_params)
    assert np.all(np.abs(new.h.data) < 1.0)
    assert delta.shape == (2, tiny_cfg.flow_grid, tiny_cfg.flow_grid)


def test_gru_closed_gate_keeps_state(tiny_cfg, tiny_params):
    state, x_t = _gru_inputs(tiny_cfg, tiny_params, seed=19)
    params = tiny_params.copy()
    params["flow.gru.wz.w"].data[:] = 0.0
    params["flow.gru.wz.b"].data[:] = -50.0  # z ~ 0 everywhere
    new, _ = gru_update(state, x_t, params)
    np.testing.assert_allclose(new.h.data, state.h.data, atol=1e-12)


def test_gru_gradient(tiny_cfg, tiny_params):
    state, x_t = _gru_inputs(tiny_cfg, tiny_params, seed=20)

    def op(hh, xx):
        s = GruState(h=hh, context=state.context)
        new, delta = gru_update(s, xx, tiny_params)
        from cascade_denoiser.tensor import concat
        return concat([new.h, delta], axis=0)

    rep = grad_check(op, [state.h, x_t], tol=1e-3, max_entries=20)
    assert rep.passed, f"max rel err {rep.max_rel_err}"


def test_gru_channel_mismatch_errors(tiny_cfg, tiny_params):
    state, x_t = _gru_inputs(tiny_cfg, tiny_params)
    bad = Tensor(x_t.data[:, :4, :4])
    with pytest.raises(DimensionError):
        gru_update(state, bad, tiny_params)


# -- refine_flow ----------------------------------------------------------------------

def test_refine_flow_sequence_length_and_determinism(tiny_cfg, tiny_params, tiny_triplet):
    flows = refine_flow(tiny_triplet, 3, tiny_params, tiny_cfg)
    assert len(flows) == 2
    assert all(len(f) == 3 for f in flows)
    assert [f.iteration for f in flows[0]] == [1, 2, 3]
    again = refine_flow(tiny_triplet, 3, tiny_params, tiny_cfg)
    for fa, fb in zip(flows[0], again[0]):
        assert fa.flow.data.tobytes() == fb.flow.data.tobytes()


def test_refine_flow_accumulates_deltas(tiny_cfg, tiny_params, tiny_triplet):
    flows = refine_flow(tiny_triplet, 2, tiny_params, tiny_cfg)[0]
    assert not np.allclose(flows[0].flow.data, flows[1].flow.data)


def test_refine_flow_param_count_independent_of_iters(tiny_cfg, tiny_params):
    # shared weights: the same ParamSet serves any iteration budget
    n_before = len(tiny_params)
    random = random_triplet(tiny_cfg, seed=33)
    refine_flow(random, 1, tiny_params, tiny_cfg)
    refine_flow(random, 4, tiny_params, tiny_cfg)
    assert len(tiny_params) == n_before


def test_refine_flow_validation(tiny_cfg, tiny_params, tiny_triplet):
    with pytest.raises(ParameterError):
        refine_flow(tiny_triplet, 0, tiny_params, tiny_cfg)
