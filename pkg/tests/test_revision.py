import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import (central_diff, constants_by_hand, field_literal, grid_max_gap_sum,
                     storage_literal)
from popdelay import DelayMatrix
from popdelay.games import rps, zero_game
from popdelay.revision import (RHO_SAFETY, ProtocolParams, auto_rho, compute_constants,
                               coupling_f, edm_field, epsilon, epsilon_bar, grad_p_storage,
                               grad_x_storage, max_valid_rho, protocol_violation, storage,
                               storage_many, switch_rate)

Q = ProtocolParams(0.25, 3)
P0 = np.array([0.0, 2.0, -1.0])


def test_switch_rate_examples():
    assert switch_rate(P0, 0, 1, Q) == 0.5
    assert switch_rate(P0, 1, 0, Q) == 0.0
    assert switch_rate(P0, 2, 2, Q) == 0.0
    with pytest.raises(IndexError):
        switch_rate(P0, 0, 3, Q)


def test_protocol_params_validation():
    with pytest.raises(ValueError):
        ProtocolParams(0.0, 3)
    with pytest.raises(ValueError):
        ProtocolParams(math.inf, 3)


def test_max_valid_rho_rps12_matches_grid_oracle():
    oracle = 1.0 / grid_max_gap_sum(rps(1, 2).matrix.tolist(), 30)
    assert oracle == pytest.approx(0.25)
    assert max_valid_rho(rps(1, 2)) == pytest.approx(0.25, abs=1e-12)
    assert auto_rho(rps(1, 2)) == pytest.approx(RHO_SAFETY / 4)


def test_max_valid_rho_zero_game_sentinel():
    assert max_valid_rho(zero_game(3)) == math.inf
    assert auto_rho(zero_game(3)) == math.inf


def test_max_valid_rho_rps11():
    v = max_valid_rho(rps(1, 1))
    assert v <= 0.5
    assert v == pytest.approx(1.0 / grid_max_gap_sum(rps(1, 1).matrix.tolist(), 30), rel=1e-9)
    with pytest.raises(ValueError):
        max_valid_rho(rps(), 1)


def test_returned_rho_satisfies_protocol_on_grid():
    g = rps(1, 3)
    r = max_valid_rho(g, 60)
    assert protocol_violation(g, ProtocolParams(r, 3), 60) <= 1 + 1e-12


def test_edm_field_examples():
    np.testing.assert_array_equal(edm_field((1 / 3,) * 3, (0.7,) * 3, Q), 0)
    np.testing.assert_allclose(edm_field((1, 0, 0), P0, Q), (-0.5, 0.5, 0.0))
    np.testing.assert_array_equal(edm_field((0, 0, 0), P0, Q), 0)


def test_storage_examples():
    assert storage((1 / 3,) * 3, (1 / 3,) * 3, Q) == 0
    assert storage((1, 0, 0), P0, Q) == pytest.approx(0.5)
    assert storage((0, 1, 0), P0, Q) == 0


def test_grad_examples():
    np.testing.assert_array_equal(grad_x_storage((0.2, 0.3, 0.5), (1.0,) * 3, Q), 0)
    np.testing.assert_allclose(grad_x_storage((1, 0, 0), P0, Q), (0.5, 0.0, 1.25))
    np.testing.assert_allclose(grad_p_storage((1, 0, 0), P0, Q), (-0.5, 0.5, 0.0))
    np.testing.assert_array_equal(grad_p_storage((0.2, 0.3, 0.5), (2.0,) * 3, Q), 0)
    np.testing.assert_array_equal(grad_p_storage((0, 0, 0), P0, Q), 0)


def test_grad_x_argmax_component_zero():
    g = grad_x_storage((0.3, 0.3, 0.4), (0.1, -0.5, 0.9), Q)
    assert g[2] == 0.0


def _random_pairs(count, seed):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(3), size=count) * rng.uniform(0.3, 1.0, size=(count, 1))
    P = rng.uniform(-2, 2, size=(count, 3))
    return X, P


def test_gradients_match_finite_differences():
    X, P = _random_pairs(1000, 3)
    checked = 0
    for x, p in zip(X, P):
        gaps = np.abs(p[:, None] - p[None, :])[~np.eye(3, dtype=bool)]
        if gaps.min() < 1e-4:
            continue
        gx = grad_x_storage(x, p, Q)
        gp = grad_p_storage(x, p, Q)
        fx = central_diff(lambda z: storage_literal(z, p, 0.25), x)
        fp = central_diff(lambda z: storage_literal(x, z, 0.25), p)
        for a, b in ((gx, fx), (gp, fp)):
            err = np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)
            assert err <= 1e-6 or np.linalg.norm(a - b) < 1e-9
        checked += 1
    assert checked > 900


def test_passivity_sign_on_random_pairs():
    X, P = _random_pairs(10_000, 4)
    worst = max(float(grad_x_storage(x, p, Q) @ edm_field(x, p, Q)) for x, p in zip(X, P))
    assert worst <= 1e-12


@settings(max_examples=300, deadline=None)
@given(w=st.lists(st.floats(0, 1), min_size=3, max_size=3),
       scale=st.floats(0, 1), a=st.floats(0.1, 3), b=st.floats(0.1, 3))
def test_field_properties_under_valid_rho(w, scale, a, b):
    g = rps(a, b)
    rho = max_valid_rho(g, 40) * 0.999
    params = ProtocolParams(rho, 3)
    s = sum(w)
    x = np.array(w) / s * scale if s > 0 else np.zeros(3)
    p = g.matrix @ x
    v = edm_field(x, p, params)
    assert np.all(np.abs(v) <= 1 + 1e-12)
    np.testing.assert_allclose(v, field_literal(x, p, rho), atol=1e-14)
    S = storage(x, p, params)
    assert S == pytest.approx(storage_literal(x, p, rho), abs=1e-14)
    for i in range(3):
        for j in range(3):
            assert S >= 0.5 * x[i] * rho * max(p[j] - p[i], 0) ** 2 - 1e-15
    gx = grad_x_storage(x, p, params)
    assert np.all(gx >= 0) and np.all(gx <= 1 / (2 * rho) + 1e-12)


@settings(max_examples=200, deadline=None)
@given(w=st.lists(st.floats(0.001, 1), min_size=3, max_size=3),
       p=st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_field_sums_to_zero_on_simplex(w, p):
    x = np.array(w) / sum(w)
    assert abs(edm_field(x, np.array(p), Q).sum()) <= 1e-12


def test_storage_many_matches_scalar():
    X, P = _random_pairs(50, 5)
    np.testing.assert_allclose(storage_many(X, P, 0.25), [storage(x, p, Q) for x, p in zip(X, P)],
                               atol=1e-15)


def test_constants_rps_reference(consts):
    hand = constants_by_hand(3, 0.25, math.sqrt(7), np.abs(np.subtract.outer(range(3), range(3))),
                             0.25)
    assert hand["d"] == [3, 2, 3]
    assert consts.N == pytest.approx(3 * math.sqrt(3), abs=1e-12)
    assert consts.N == pytest.approx(5.196, abs=1e-3)
    assert consts.M == pytest.approx(hand["M"], rel=1e-14)
    assert consts.M == pytest.approx(46.3, abs=0.05)
    assert consts.K == pytest.approx(hand["K"], rel=1e-14)
    assert consts.K == pytest.approx(501, abs=1)
    assert consts.L == pytest.approx(hand["L"], rel=1e-14)
    assert consts.B_DF == pytest.approx(math.sqrt(7))
    assert consts.d_max == 2.0
    assert consts.d_i == (3.0, 2.0, 3.0)


def test_constants_invariants(consts):
    n = 3
    strict = consts.M * (consts.B_DF + 1 / (2 * consts.rho)) * n**0.5 / (1 - consts.delta)
    assert consts.K > strict
    assert consts.L >= n**0.5 / (2 * consts.rho) + consts.B_DF * n**0.5 - 1e-12


def test_constants_delta_validated(game, params, delays):
    for d in (0.0, 0.5, -0.1, 0.7):
        with pytest.raises(ValueError):
            compute_constants(game, params, delays, d)
    with pytest.raises(ValueError):
        compute_constants(game, params, DelayMatrix.abs_diff(4), 0.25)


def test_coupling_f_examples(consts):
    x = (1, 0, 0)
    expected = consts.M * (math.sqrt(7) * math.sqrt(2) / 2 + math.hypot(0.5, 1.25))
    assert coupling_f(x, P0, Q, consts) == pytest.approx(expected, rel=1e-14)
    assert coupling_f((1 / 3,) * 3, (1 / 3,) * 3, Q, consts) == 0
    assert coupling_f((0, 0, 0), (0.4,) * 3, Q, consts) == 0


def test_coupling_f_upper_bound(consts):
    X, P = _random_pairs(500, 6)
    cap = consts.M * (consts.B_DF + 1 / (2 * consts.rho)) * math.sqrt(3)
    g = rps()
    for x in X:
        assert coupling_f(x, g.matrix @ x, Q, consts) <= cap


def test_epsilon(consts):
    assert epsilon(1.0, consts) == pytest.approx(math.sqrt(162 * consts.K), rel=1e-14)
    assert epsilon(4e-3, consts) == pytest.approx(2 * epsilon(1e-3, consts), rel=1e-14)
    assert epsilon(1e-30, consts) < 1e-10
    with pytest.raises(ValueError):
        epsilon(0.0, consts)


def test_epsilon_bar(consts, game, params):
    lams = [2.0**-k for k in range(10, -1, -1)]
    vals = [epsilon_bar(l, consts) for l in lams]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert epsilon_bar(1e-30, consts) < 1e-10
    no_delay = compute_constants(game, params, DelayMatrix.zeros(3), 0.25)
    assert epsilon_bar(0.3, no_delay) == epsilon(0.3, no_delay)
    with pytest.raises(ValueError):
        epsilon_bar(-1.0, consts)


def test_text_block_lists_constants(consts):
    text = consts.text_block()
    for key in ("N", "M", "K", "L", "B_DF", "rho", "d_max"):
        assert f"\n{key} = " in "\n" + text
