"""Central finite-difference checks of every differentiable op."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .deep_kriging import NetworkConfig, build_network, predict

OP_TOLERANCE = 1e-6
NETWORK_TOLERANCE = 1e-3


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, x: np.ndarray, h: float, index=None) -> np.ndarray:
    """Central differences of scalar f() with respect to x (perturbed in place)."""
    idx = list(np.ndindex(x.shape)) if index is None else index
    out = np.zeros(len(idx))
    for i, ix in enumerate(idx):
        old = x[ix]
        x[ix] = old + h
        fp = f()
        x[ix] = old - h
        fm = f()
        x[ix] = old
        out[i] = (fp - fm) / (2 * h)
    return out if index is not None else out.reshape(x.shape)


def _check(build, inputs, h):
    """Compare analytic and numeric gradients of sum(build(*inputs) * R)."""
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    out = build(*tensors)
    proj = np.random.default_rng(1234).standard_normal(out.shape)
    loss = ad.mean(ad.mul(out, proj)) if out.data.size > 1 else out
    loss.backward()
    worst = 0.0
    for t, x in zip(tensors, inputs):

        def f():
            with ad.no_grad():
                o = build(*[Tensor(v) for v in inputs])
            return float(np.mean(o.data * proj)) if o.data.size > 1 else float(o.data)

        num = numeric_grad(f, x, h)
        worst = max(worst, relative_error(t.grad, num))
    return worst


def check_ops(seed: int = 0) -> dict:
    """Max relative error per op, double precision."""
    rng = np.random.default_rng(seed)
    res = {}

    def away_from_zero(shape):
        x = rng.uniform(0.2, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
        return x

    x = rng.standard_normal((2, 3, 5, 5))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    res["conv2d"] = _check(lambda x, k, b: ad.conv2d(x, k, b, pad=1), [x, k, b], 1e-3)

    x = rng.standard_normal((3, 2, 4, 4)) * 2 + 1
    g = rng.uniform(0.5, 1.5, 2)
    s = rng.standard_normal(2)
    res["batchnorm_train"] = _check(
        lambda x, g, s: ad.batchnorm(x, g, s, None, None, training=True), [x, g, s], 1e-5)
    rm = Tensor(rng.standard_normal(2))
    rv = Tensor(rng.uniform(0.5, 2.0, 2))
    res["batchnorm_eval"] = _check(
        lambda x, g, s: ad.batchnorm(x, g, s, rm, rv, training=False), [x, g, s], 1e-5)

    res["relu"] = _check(ad.relu, [away_from_zero((2, 3, 4, 4))], 1e-6)

    xd = rng.standard_normal((2, 3, 4, 4))

    def drop(x):
        return ad.dropout(x, 0.3, np.random.default_rng(7), training=True)

    res["dropout"] = _check(drop, [xd], 1e-6)

    w = rng.uniform(0.1, 1.0, (2, 9, 3, 3))
    res["normalize_sum"] = _check(ad.normalize_sum, [w], 1e-7)
    a = rng.standard_normal((2, 9, 3, 3))
    c = rng.standard_normal((2, 9, 3, 3))
    res["channel_dot"] = _check(ad.channel_dot, [a, c], 1e-6)

    target = rng.standard_normal((2, 1, 4, 4))
    res["mse"] = _check(lambda p: ad.mse(p, target), [rng.standard_normal((2, 1, 4, 4))], 1e-6)
    res["add"] = _check(ad.add, [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))], 1e-6)
    res["mul"] = _check(ad.mul, [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))], 1e-6)
    return res


def check_network(seed: int = 0, K: int = 1, depth: int = 8, units: int = 2, size: int = 8,
                  samples_per_tensor: int = 12) -> dict:
    """End-to-end gradient of the training loss, analytic in float32 versus
    central differences in float64. Returns max relative error per tensor."""
    config = NetworkConfig(K=K, feature_depth=depth, units=units)
    p32 = build_network(config, seed=seed, dtype=np.float32)
    rng = np.random.default_rng(seed + 1)
    # move the head away from its near-identity start so every branch matters
    p32["head.conv.weight"].data[...] = rng.standard_normal(p32["head.conv.weight"].shape) * 0.05
    p32["head.conv.bias"].data[...] += rng.uniform(0.0, 0.2, p32["head.conv.bias"].shape)
    lr = rng.uniform(0, 255, (2, size, size))
    hr = lr + rng.normal(0, 10, lr.shape)

    def loss_of(params, dtype):
        pred = predict(params, lr.astype(dtype), training=True, rng=np.random.default_rng(99), dropout=0.3)
        return ad.mse(pred, hr[:, None].astype(dtype))

    loss = loss_of(p32, np.float32)
    loss.backward()
    p64 = p32.astype(np.float64)

    def f():
        with ad.no_grad():
            return float(loss_of(p64, np.float64).data)

    pairs = {}
    for name, t in p64.trainable().items():
        n = t.data.size
        pick = rng.choice(n, size=min(samples_per_tensor, n), replace=False)
        index = [np.unravel_index(i, t.shape) for i in pick]
        scale = max(1e-3, float(np.abs(t.data).max()))
        num = numeric_grad(f, t.data, 1e-6 * scale, index)
        ana = np.array([p32[name].grad[ix] for ix in index])
        pairs[name] = (ana, num)
    # Conv biases feeding a training-mode batchnorm have an exactly zero
    # gradient; compare those against the largest tensor gradient instead.
    floor = 1e-3 * max(np.linalg.norm(a) for a, _ in pairs.values())
    return {
        name: float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))
        for name, (a, n) in pairs.items()
    }


def report(seed: int = 0) -> tuple[bool, list[str]]:
    ops = check_ops(seed)
    net = check_network(seed)
    lines = []
    ok = True
    for name, err in ops.items():
        passed = err < OP_TOLERANCE
        ok &= passed
        lines.append(f"{'PASS' if passed else 'FAIL'} op {name:<16} max_rel_err={err:.3e} tol={OP_TOLERANCE:g}")
    worst = max(net.values())
    passed = worst < NETWORK_TOLERANCE
    ok &= passed
    lines.append(f"{'PASS' if passed else 'FAIL'} network end-to-end  max_rel_err={worst:.3e} tol={NETWORK_TOLERANCE:g}")
    return ok, lines
