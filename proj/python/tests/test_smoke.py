import json

import numpy as np
import pytest

import lva


def small_problem(seed=0):
    rng = np.random.default_rng(seed)
    sx = rng.normal(size=(40, 2))
    sy = rng.normal(size=(40, 1))
    tx = sx + 0.1 * rng.normal(size=sx.shape)
    ty = sy + 0.2 * rng.normal(size=sy.shape)
    return lva.make_mlp([2, 6, 5, 1], "tanh", seed=seed), sx, sy, tx, ty


def test_least_squares_matches_numpy():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 4))
    b = rng.normal(size=(30, 2))
    coef, info = lva.least_squares(a, b)
    np.testing.assert_allclose(coef, np.linalg.lstsq(a, b, rcond=None)[0], atol=1e-12)
    assert info["rank"] == 4 and not info["rank_deficient"]


def test_mlp_forward_and_json_round_trip():
    net = lva.make_mlp([3, 4, 2], "relu", seed=5)
    x = np.random.default_rng(2).normal(size=(7, 3))
    w0, b0, w1, b1 = net.weight(0), net.bias(0), net.weight(1), net.bias(1)
    expected = np.maximum(x @ w0.T + b0, 0.0) @ w1.T + b1
    np.testing.assert_allclose(net(x), expected, atol=1e-14)
    back = lva.Mlp.from_json(net.to_json())
    assert back == net
    assert net.activation(1) == "identity"


def test_one_layer_adaptation_is_optimal_on_target():
    net, sx, sy, tx, ty = small_problem()
    adapted, info = lva.lva_one_layer(net, sx, sy, tx, ty)
    # Zero gradient of the regression objective at the closed-form solution.
    z = net.latent(tx, net.num_layers - 1)
    resid = z @ info["d_weight"].T + info["d_bias"] - info["q"]
    assert np.abs(resid.T @ z).max() < 1e-8
    assert lva.mse_loss(adapted, tx, ty) <= lva.mse_loss(net, tx, ty)
    assert info["layer"] == net.num_layers - 1


def test_two_layer_and_bounds():
    net, sx, sy, tx, ty = small_problem(3)
    g1, _ = lva.lva_one_layer(net, sx, sy, tx, ty)
    g2, info = lva.lva_two_layer(net, sx, sy, tx, ty, sweeps=3)
    assert info["target_loss"] <= info["one_layer_loss"] + 1e-9
    hist = info["objective_history"]
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))
    rep = lva.verify_transfer_bound(net, g1, 1, sx, sy, tx, ty)
    assert rep["holds"] and rep["lhs"] <= rep["rhs"]
    gen = lva.verify_generalization_bound(g1, tx, ty, tx[:20], ty[:20])
    assert gen["holds"]
    json.dumps(rep)


def test_pretrain_and_generators_are_deterministic():
    x, y = lva.gen_signal(200, seed=1, domain="source")
    assert x.shape == (200, 1) and y.shape == (200, 1)
    np.testing.assert_allclose(y[:, 0], np.sin(5 * np.pi * x[:, 0]), atol=1e-12)
    net = lva.make_mlp([1, 16, 1], seed=1)
    a, rep_a = lva.pretrain(net, x, y, epochs=20, seed=4)
    b, rep_b = lva.pretrain(net, x, y, epochs=20, seed=4)
    assert a == b and rep_a["loss_history"] == rep_b["loss_history"]
    (bs, _), (bt, _) = lva.gen_blur_pairs(image_size=8, num_images=3)
    assert bs.shape == (3, 64) and bt.shape == (3, 64)


def test_errors_map_to_python_exceptions():
    net, sx, sy, tx, ty = small_problem()
    with pytest.raises(lva.ShapeError):
        net(np.zeros((3, 5)))
    with pytest.raises(lva.LvaError):
        lva.lva_one_layer(net, sx, sy, tx, ty, align="bogus")
    relu_out = lva.make_mlp([2, 3, 1], "relu", "relu")
    with pytest.raises(lva.UnsupportedModelError):
        lva.lva_one_layer(relu_out, sx, sy, tx, ty)
    with pytest.raises(lva.ParseError):
        lva.Mlp.from_json("{")
