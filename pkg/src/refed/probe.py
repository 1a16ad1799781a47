"""Held-out linear probe: how much of a label can be read linearly off a feature set."""
from dataclasses import dataclass

import numpy as np

from .nn import AdamW, Parameter, softmax_xent


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    n_train: int
    n_test: int


def group_holdout(targets, groups, fraction, rng):
    """Boolean test mask holding out ~``fraction`` of the groups of each target value.

    Every group must carry a single target value (pixels of one polygon share
    a domain and a class), so no group straddles the split.
    """
    targets = np.asarray(targets)
    groups = np.asarray(groups)
    test_groups = []
    for value in np.unique(targets):
        gids = np.unique(groups[targets == value])
        n_test = max(1, int(round(fraction * len(gids)))) if len(gids) > 1 else 0
        test_groups.append(rng.permutation(gids)[:n_test])
    return np.isin(groups, np.concatenate(test_groups))


def linear_probe(features, targets, groups, seed=0, test_fraction=0.3, steps=300, lr=0.05, weight_decay=1e-4):
    """Train softmax regression on standardized features; report held-out accuracy in percent."""
    x = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    y = np.asarray(targets, dtype=np.int64)
    rng = np.random.default_rng(seed)
    test = group_holdout(y, groups, test_fraction, rng)
    if test.all() or not test.any():
        raise ValueError("probe needs at least two groups per target value")
    mu = x[~test].mean(axis=0)
    sd = x[~test].std(axis=0)
    sd[sd == 0] = 1.0
    x = (x - mu) / sd
    n_out = int(y.max()) + 1
    w = Parameter("probe.weight", np.zeros((x.shape[1], n_out)))
    b = Parameter("probe.bias", np.zeros(n_out))
    opt = AdamW([w, b], lr=lr, weight_decay=weight_decay)
    xtr, ytr = x[~test], y[~test]
    for _ in range(steps):
        logits = xtr @ w.value + b.value
        _, g = softmax_xent(logits, ytr)
        w.grad[...] = xtr.T @ g
        b.grad[...] = g.sum(axis=0)
        opt.step()

    def acc(xs, ys):
        return float(100.0 * np.mean((xs @ w.value + b.value).argmax(axis=1) == ys))

    return ProbeResult(acc(xtr, ytr), acc(x[test], y[test]), int((~test).sum()), int(test.sum()))


def domain_probe(source, target, features=None, seed=0, **kw):
    """Domain-probe accuracy on raw pixels (``features=None``) or on given per-sample features."""
    if features is None:
        features = np.concatenate([source.features, target.features])
    domains = np.concatenate([source.domains, target.domains])
    groups = np.concatenate([source.polygon_ids, target.polygon_ids])
    return linear_probe(features, domains, groups, seed=seed, **kw)


def branch_domain_probes(model, source, target, level=1, seed=0, **kw):
    """Domain-probe accuracy on each REFeD branch's features at ``level``: ``{"spe": ..., "inv": ...}``."""
    from .refed import embeddings

    out = {}
    for branch in ("spe", "inv"):
        feats = np.concatenate([embeddings(source, model, level, branch=branch),
                                embeddings(target, model, level, branch=branch)])
        out[branch] = domain_probe(source, target, features=feats, seed=seed, **kw)
    return out
