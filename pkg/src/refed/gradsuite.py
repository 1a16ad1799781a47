"""Finite-difference checks for every primitive and for the full two-branch loss.

Layer primitives run entirely in float64 under a random linear read-out.
The contrastive loss, the classifier head and the full loss take analytic
gradients in float64 and central differences from an extended-precision
evaluation with identical parameters and frozen dropout masks. Convolution
and linear biases feeding a training-mode batch norm have an exactly zero
gradient, and in float64 the central difference of such a coordinate is
pure rounding noise of the loss. These checks use a step of 1e-5.
"""
import time

import numpy as np

from .nn import Parameter, grad_check
from .nn import functional as F
from .refed import RefedModel, contrastive_loss
from .tempcnn import Classifier, FeatureTaps

EXTENDED = np.longdouble


def _readout_check(forward, backward, tensors, rng, eps, tol, max_coords):
    """Check ``sum(R * forward(*tensors))`` for a fixed random ``R``."""
    params = [Parameter(name, np.asarray(v, dtype=np.float64)) for name, v in tensors.items()]
    probe = forward(*[p.value for p in params])
    R = rng.standard_normal(probe.shape)

    def loss_and_grad():
        vals = [p.value for p in params]
        out = forward(*vals)
        grads = backward(*vals, R)
        for p, g in zip(params, grads):
            if g is not None:
                p.grad += g
        return float((out * R).sum())

    def loss_only():
        return float((forward(*[p.value for p in params]) * R).sum())

    return grad_check(loss_and_grad, params, eps=eps, tol=tol, max_coords=max_coords, loss_fn=loss_only)


def check_conv1d(rng, eps=1e-6, tol=1e-4, max_coords=None):
    B, ci, co, T = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4), rng.integers(3, 8)
    k = int(rng.choice([1, 3, 5]))
    tensors = {
        "x": rng.standard_normal((B, ci, T)),
        "w": rng.standard_normal((co, ci, k)),
        "b": rng.standard_normal(co),
    }
    return _readout_check(F.conv1d, lambda x, w, b, g: F.conv1d_backward(x, w, g), tensors, rng, eps, tol, max_coords)


def _bn_case(rng, training):
    B, C, T = rng.integers(1, 5), rng.integers(1, 4), rng.integers(2, 6)
    rm, rv = rng.standard_normal(C), rng.uniform(0.5, 2.0, C)

    def fwd(x, gamma, beta):
        y, _ = F.batchnorm1d(x, gamma, beta, training, rm.copy(), rv.copy())
        return y

    def bwd(x, gamma, beta, g):
        _, cache = F.batchnorm1d(x, gamma, beta, training, rm.copy(), rv.copy())
        return F.batchnorm1d_backward(cache, g)

    tensors = {
        "x": rng.standard_normal((B, C, T)),
        "gamma": rng.uniform(0.5, 1.5, C),
        "beta": rng.standard_normal(C),
    }
    return fwd, bwd, tensors


def check_batchnorm_train(rng, eps=1e-6, tol=1e-4, max_coords=None):
    fwd, bwd, tensors = _bn_case(rng, True)
    return _readout_check(fwd, bwd, tensors, rng, eps, tol, max_coords)


def check_batchnorm_eval(rng, eps=1e-6, tol=1e-4, max_coords=None):
    fwd, bwd, tensors = _bn_case(rng, False)
    return _readout_check(fwd, bwd, tensors, rng, eps, tol, max_coords)


def check_relu(rng, eps=1e-6, tol=1e-4, max_coords=None):
    x = rng.standard_normal((3, 7))
    x = np.where(np.abs(x) < 0.05, 0.5, x)  # keep away from the kink
    return _readout_check(F.relu, lambda x, g: [F.relu_backward(x, g)], {"x": x}, rng, eps, tol, max_coords)


def check_dropout(rng, eps=1e-6, tol=1e-4, max_coords=None):
    x = rng.standard_normal((4, 6))
    _, mask = F.dropout(x, 0.5, rng, True)
    return _readout_check(lambda x: x * mask, lambda x, g: [g * mask], {"x": x}, rng, eps, tol, max_coords)


def check_linear(rng, eps=1e-6, tol=1e-4, max_coords=None):
    n, i, o = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
    tensors = {"x": rng.standard_normal((n, i)), "w": rng.standard_normal((i, o)), "b": rng.standard_normal(o)}
    return _readout_check(F.linear, lambda x, w, b, g: F.linear_backward(x, w, g), tensors, rng, eps, tol, max_coords)


def check_flatten(rng, eps=1e-6, tol=1e-4, max_coords=None):
    x = rng.standard_normal((2, 3, 4))
    return _readout_check(F.flatten, lambda x, g: [g.reshape(x.shape)], {"x": x}, rng, eps, tol, max_coords)


def check_softmax_xent(rng, eps=1e-6, tol=1e-4, max_coords=None):
    B, M = rng.integers(1, 6), rng.integers(2, 6)
    logits = Parameter("logits", rng.standard_normal((B, M)) * 2)
    labels = rng.integers(0, M, B)

    def loss_and_grad():
        loss, g = F.softmax_xent(logits.value, labels)
        logits.grad += g
        return float(loss)

    return grad_check(loss_and_grad, [logits], eps=eps, tol=tol, max_coords=max_coords)


def check_contrastive(rng, eps=1e-5, tol=1e-4, max_coords=None, normalize=True):
    n, d = int(rng.integers(2, 13)), int(rng.integers(1, 9))
    z = Parameter("z", rng.standard_normal((n, d)))
    labels = rng.integers(0, max(1, n // 2), n)
    tau = float(rng.choice([0.07, 0.5, 1.0]))

    def loss_and_grad():
        loss, g = contrastive_loss(z.value, labels, tau, normalize)
        z.grad += g
        return float(loss)

    def loss_ext():
        # small gradients against a loss near 25 (tau=0.07, unnormalized) drown in float64 rounding
        return contrastive_loss(z.value.astype(EXTENDED), labels, tau, normalize)[0]

    return grad_check(loss_and_grad, [z], eps=eps, tol=tol, max_coords=max_coords, loss_fn=loss_ext)


def _sync(dst_params, src_params):
    for d, s in zip(dst_params, src_params):
        d.value[...] = s.value


def check_classifier(rng, eps=1e-5, tol=1e-4, max_coords=8):
    """Gradient of the mean logit w.r.t. all classifier parameters (training mode)."""
    d_in, m = int(rng.integers(4, 12)), int(rng.integers(2, 5))
    seed = int(rng.integers(2**31))
    z = rng.standard_normal((6, d_in))
    heads = {}
    for dtype in (np.float64, EXTENDED):
        head = Classifier("f", d_in, m, np.random.default_rng(seed), dropout=0.5, dtype=dtype)
        head.train()
        head.forward(z.astype(dtype))
        head.drop.freeze()
        heads[dtype] = head
    ref, twin = heads[np.float64], heads[EXTENDED]
    zx = z.astype(EXTENDED)

    def loss_and_grad():
        _, logits = ref.forward(z)
        ref.backward(np.full_like(logits, 1.0 / logits.size))
        return logits.mean()

    def loss_ext():
        _sync(twin.parameters(), ref.parameters())
        return twin.forward(zx)[1].mean()

    return grad_check(loss_and_grad, ref.parameters(), eps=eps, tol=tol, max_coords=max_coords, loss_fn=loss_ext)


class _CachedTwin:
    """Extended-precision evaluator that re-runs only components whose parameters changed."""

    def __init__(self, model, x):
        self.model = model
        self.x = x.astype(model.dtype)
        self._cache = {}

    @staticmethod
    def _key(component):
        return b"".join(p.value.tobytes() for p in component.parameters())

    def _run(self, name, key, fn):
        hit = self._cache.get(name)
        if hit is not None and hit[0] == key:
            return hit[1]
        out = fn()
        self._cache[name] = (key, out)
        return out

    def taps(self, enc, head):
        ek = self._key(enc)
        z0, z1 = self._run(enc.name, ek, lambda: tuple(a.copy() for a in enc.forward(self.x)))
        z2, logits = self._run(head.name, ek + self._key(head), lambda: tuple(a.copy() for a in head.forward(z1)))
        return FeatureTaps(z0, z1, z2), logits

    def loss(self, labels, domains):
        m = self.model
        inv, lc = self.taps(m.g_inv, m.f)
        spe, ld = self.taps(m.g_spe, m.f_dom)
        return m.assemble_losses(inv, lc, spe, ld, labels, domains).total


def check_full_loss(seed, eps=1e-5, tol=1e-4, max_coords=2, batch=8, t_len=6, n_bands=2, n_classes=3):
    """Full unweighted loss of the two-branch model on a toy batch, dropout frozen."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, t_len, n_bands))
    y = rng.integers(0, n_classes, batch)
    d = rng.integers(0, 2, batch)
    models = {}
    for dtype in (np.float64, EXTENDED):
        m = RefedModel(t_len, n_bands, n_classes, seed=seed, dtype=dtype)
        m.train()
        m.forward_losses(x, y, d, backward=False)
        m.freeze_dropout()
        models[dtype] = m
    ref = models[np.float64]
    twin = _CachedTwin(models[EXTENDED], x)

    def loss_and_grad():
        return ref.forward_losses(x, y, d).total

    def loss_ext():
        _sync(twin.model.parameters(), ref.parameters())
        return twin.loss(y, d)

    return grad_check(loss_and_grad, ref.parameters(), eps=eps, tol=tol, max_coords=max_coords, seed=seed,
                      loss_fn=loss_ext)


PRIMITIVES = {
    "conv1d": check_conv1d,
    "batchnorm1d_train": check_batchnorm_train,
    "batchnorm1d_eval": check_batchnorm_eval,
    "relu": check_relu,
    "dropout": check_dropout,
    "linear": check_linear,
    "flatten": check_flatten,
    "softmax_xent": check_softmax_xent,
}

# central differences taken on an extended-precision evaluation, with their own step
EXTENDED_CHECKS = {
    "contrastive": check_contrastive,
    "contrastive_unnormalized": lambda rng, **kw: check_contrastive(rng, normalize=False, **kw),
    "classifier": check_classifier,
}


def run_suite(n_seeds=20, tol=1e-4, eps=1e-6, full_loss=True, progress=None):
    """Run every check over ``n_seeds`` seeds; returns ``{check: worst_rel_err}`` and the elapsed time."""
    started = time.perf_counter()
    worst = {}
    for name, check in PRIMITIVES.items():
        errs = [check(np.random.default_rng(1000 + s), eps=eps, tol=tol).worst for s in range(n_seeds)]
        worst[name] = max(errs)
        if progress:
            progress(name, worst[name])
    for name, check in EXTENDED_CHECKS.items():
        worst[name] = max(check(np.random.default_rng(1000 + s), tol=tol).worst for s in range(n_seeds))
        if progress:
            progress(name, worst[name])
    if full_loss:
        worst["refed_full_loss"] = max(check_full_loss(s, tol=tol).worst for s in range(n_seeds))
        if progress:
            progress("refed_full_loss", worst["refed_full_loss"])
    return worst, time.perf_counter() - started
