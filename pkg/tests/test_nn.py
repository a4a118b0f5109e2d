import numpy as np
import pytest

from prpose import nn


def _net(seed=0, d_in=6, d_out=4, hidden=8, blocks=1):
    return nn.Network.init(nn.NetSpec(d_in, d_out, hidden, blocks), np.random.default_rng(seed))


def _oracle_forward(net, x):
    """Loop-based re-implementation of the residual MLP for one input vector."""
    P = [p.tolist() for p in net.params]

    def dense(v, W, b, relu):
        out = [sum(v[i] * W[i][j] for i in range(len(v))) + b[j] for j in range(len(b))]
        return [max(o, 0.0) for o in out] if relu else out

    h = dense(list(x), P[0], P[1], True)
    i = 2
    for _ in range(net.spec.block_count):
        a = dense(h, P[i], P[i + 1], True)
        bb = dense(a, P[i + 2], P[i + 3], True)
        h = [u + w for u, w in zip(h, bb)]
        i += 4
    return np.array(dense(h, P[i], P[i + 1], False))


def test_zero_network_outputs_zero():
    spec = nn.NetSpec(5, 3, 7, 2)
    net = nn.Network(spec, [np.zeros(s) for s in spec.param_shapes()])
    assert np.all(nn.forward(net, np.random.default_rng(0).normal(size=(4, 5))) == 0)


def test_identity_linear_layer():
    net = nn.Network(nn.NetSpec(4, 4, 0), [np.eye(4), np.zeros(4)])
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert np.array_equal(nn.forward(net, x), x)


def test_forward_matches_loop_oracle():
    net = _net(3, 5, 3, 6, 2)
    X = np.random.default_rng(4).normal(size=(5, 5))
    out = nn.forward(net, X)
    for x, o in zip(X, out):
        np.testing.assert_allclose(o, _oracle_forward(net, x), rtol=0, atol=1e-12)


def test_zero_upstream_gives_zero_grads():
    net = _net()
    X = np.random.default_rng(0).normal(size=(3, 6))
    for g in nn.backward(net, X, np.zeros((3, 4))):
        assert not np.any(g)


def test_linear_layer_quadratic_loss_closed_form():
    rng = np.random.default_rng(2)
    W, b = rng.normal(size=(3, 2)), rng.normal(size=2)
    net = nn.Network(nn.NetSpec(3, 2, 0), [W, b])
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    _, (gW, gb) = nn.loss_gradients(net, X, nn.MSELoss(Y))
    R = X @ W + b - Y
    np.testing.assert_allclose(gW, 2 * X.T @ R / R.size, atol=1e-14)
    np.testing.assert_allclose(gb, 2 * R.sum(0) / R.size, atol=1e-14)


def test_grad_check_linear_is_exact():
    rng = np.random.default_rng(5)
    net = nn.Network(nn.NetSpec(4, 3, 0), [rng.normal(size=(4, 3)), rng.normal(size=3)])
    X = rng.normal(size=(2, 4))
    loss = nn.LinearLoss(rng.normal(size=(2, 3)))
    assert nn.grad_check(net, X, loss, dtype=np.longdouble) < 1e-10


@pytest.mark.parametrize("loss_cls", [nn.MSELoss, nn.L1Loss])
def test_grad_check_deep_net(loss_cls):
    rng = np.random.default_rng(7)
    net = _net(7, 6, 4, 10, 2)
    X = rng.normal(size=(1, 6))
    assert nn.relu_margin(net, X) > 1e-3
    assert nn.grad_check(net, X, loss_cls(rng.normal(size=(1, 4))), dtype=np.longdouble) < 1e-6


def test_grad_check_catches_corruption():
    rng = np.random.default_rng(8)
    net = _net(8)
    X = rng.normal(size=(1, 6))
    loss = nn.MSELoss(rng.normal(size=(1, 4)))
    _, grads = nn.loss_gradients(net, X, loss)
    grads = [g.copy() for g in grads]
    k = int(np.argmax(np.abs(grads[-2])))
    grads[-2].flat[k] *= 2
    assert nn.grad_check(net, X, loss, analytic=grads) > 1e-2


def test_adam_zero_gradient_keeps_params():
    net = _net()
    before = [p.copy() for p in net.params]
    st = nn.Adam.for_network(net)
    nn.adam_step(st, net, [np.zeros_like(p) for p in net.params])
    assert st.t == 1
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params))


def test_adam_scalar_oracle():
    net = nn.Network(nn.NetSpec(1, 1, 0), [np.zeros((1, 1)), np.zeros(1)])
    st = nn.Adam.for_network(net, lr=0.1)
    nn.adam_step(st, net, [np.ones((1, 1)), np.zeros(1)])
    b1, b2, eps, g = 0.9, 0.999, 1e-8, 1.0
    m_hat = ((1 - b1) * g) / (1 - b1)
    v_hat = ((1 - b2) * g * g) / (1 - b2)
    assert net.params[0][0, 0] == pytest.approx(-0.1 * m_hat / (v_hat ** 0.5 + eps), abs=1e-15)


def test_adam_rejects_frozen():
    net = _net().freeze()
    blob = net.to_bytes()
    with pytest.raises(nn.FrozenNetworkError):
        nn.adam_step(nn.Adam.for_network(net), net, [np.ones_like(p) for p in net.params])
    assert net.to_bytes() == blob


def test_checkpoint_round_trip(tmp_path):
    net = _net(9, blocks=2)
    net.meta = {"role": "x"}
    nn.save_checkpoint(net.freeze(), tmp_path / "n.ckpt")
    back = nn.load_checkpoint(tmp_path / "n.ckpt")
    X = np.random.default_rng(0).normal(size=(100, 6))
    assert np.array_equal(nn.forward(back, X), nn.forward(net, X))
    assert back.frozen and back.meta == {"role": "x"}
    assert back.digest() == net.digest()


def test_checkpoint_tampered_shape(tmp_path):
    blob = _net().to_bytes()
    head, body = blob.split(b"\n", 1)
    bad = head.replace(b"[6, 8]", b"[8, 6]", 1) + b"\n" + body
    with pytest.raises(nn.CheckpointError):
        nn.Network.from_bytes(bad)
    with pytest.raises(nn.CheckpointError):
        nn.Network.from_bytes(blob[:-8])


def test_stacked_forward_matches_loop():
    net = _net(11)
    X = np.random.default_rng(1).normal(size=(3, 6))
    params = [np.stack([p, 2 * p]) for p in net.params]
    out, _ = nn._forward(net.spec, params, X)
    np.testing.assert_allclose(out[0], nn.forward(net, X), atol=1e-13)
    doubled = nn.Network(net.spec, [2 * p for p in net.params])
    np.testing.assert_allclose(out[1], nn.forward(doubled, X), atol=1e-12)


@pytest.mark.parametrize("spec,loss_cls", [(nn.NetSpec(32, 48, 256, 2), nn.L1Loss),
                                           (nn.NetSpec(32, 16, 128, 1), nn.MSELoss)])
def test_adam_first_steps_decrease_loss(spec, loss_cls):
    rng = np.random.default_rng(12)
    net = nn.Network.init(spec, rng)
    X, loss = rng.normal(size=(64, 32)), loss_cls(rng.normal(size=(64, spec.output_dim)))
    st = nn.Adam.for_network(net, lr=1e-3)
    values = []
    for _ in range(11):
        value, grads = nn.loss_gradients(net, X, loss)
        values.append(value)
        nn.adam_step(st, net, grads)
    assert all(b < a for a, b in zip(values, values[1:]))


def test_forward_does_not_mutate():
    net = _net(13, blocks=2)
    blob = net.to_bytes()
    X = np.random.default_rng(2).normal(size=(4, 6))
    a = nn.forward(net, X)
    assert np.array_equal(nn.forward(net, X), a) and net.to_bytes() == blob
