"""Two-branch disentanglement model: invariant + specific encoders, task and domain heads.

Training minimises the unweighted sum of the task cross-entropy, the domain
cross-entropy and a supervised contrastive loss applied separately at three
depths. Inference uses the invariant encoder and the task head only.
"""
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .config import RunConfig
from .data import Kind, concat, mixed_labels
from .nn import AdamW, load_state_dict, softmax_xent, state_dict
from .tempcnn import Classifier, Encoder, FeatureTaps, predict_proba
from .training import BestCheckpoint, minibatches, run_streams, validation_metrics

log = logging.getLogger(__name__)

LEVELS = (0, 1, 2)


@dataclass
class LossBreakdown:
    l_cl: float
    l_dom: float
    l_con_0: float
    l_con_1: float
    l_con_2: float

    @property
    def total(self):
        return self.l_cl + self.l_dom + self.l_con_0 + self.l_con_1 + self.l_con_2

    def to_dict(self):
        d = {k: float(v) for k, v in asdict(self).items()}
        d["total"] = float(self.total)
        return d


def contrastive_loss(z, labels, tau, normalize=True):
    """Supervised contrastive loss over one level of the augmented batch.

    ``z`` is ``[2B, d]`` and ``labels`` are mixed labels. Positives of anchor
    ``i`` are the other items sharing its label; anchors without positives
    are skipped and the rest are averaged. Returns ``(loss, dloss/dz)``.
    """
    z = np.asarray(z)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least two items")
    if labels.shape != (n,):
        raise ValueError("one label per item is required")
    dt = z.dtype.type
    acc = np.promote_types(z.dtype, np.float64)
    _, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    npos = counts[inv] - 1
    active = npos > 0
    n_active = int(active.sum())
    if n_active == 0:
        return acc.type(0.0), np.zeros_like(z)
    if normalize:
        norm = np.sqrt(np.einsum("ij,ij->i", z, z))[:, None]
        norm = np.maximum(norm, 1e-12).astype(z.dtype)
        u = z / norm
    else:
        u = z
    inv_tau = dt(1.0 / tau)

    # ex holds exp(s_ij - max_j s_ij) with s = u u^T / tau and the diagonal excluded
    ex = u @ u.T
    ex *= inv_tau
    np.fill_diagonal(ex, -np.inf)
    smax = ex.max(axis=1)
    ex -= smax[:, None]
    np.exp(ex, out=ex)
    denom = ex.sum(axis=1)
    log_denom = smax.astype(acc) + np.log(denom.astype(acc))

    # sums over positives through per-label sums, O(n d) instead of O(n^2)
    onehot = np.zeros((n, len(counts)), dtype=z.dtype)
    onehot[np.arange(n), inv] = 1
    class_sum = (onehot.T @ u)[inv]
    uu = np.einsum("ij,ij->i", u, u)
    pos_sim = (np.einsum("ij,ij->i", u, class_sum).astype(acc) - uu) * inv_tau
    safe_npos = np.maximum(npos, 1)
    per_anchor = log_denom - pos_sim / safe_npos
    loss = per_anchor[active].sum() / n_active

    # d loss / d s_ij = w_i (softmax_ij - [j in P(i)] / |P(i)|), w_i = active_i / n_active
    w = active / n_active
    ex *= (w / denom).astype(z.dtype)[:, None]
    du = (ex + ex.T) @ u
    cp = (w / safe_npos).astype(z.dtype)[:, None]
    du -= cp * (class_sum - u)
    du -= (onehot.T @ (cp * u))[inv] - cp * u
    du *= inv_tau
    if not normalize:
        return loss, du
    dz = (du - u * np.einsum("ij,ij->i", u, du)[:, None]) / norm
    return loss, dz


class RefedModel:
    """Pseudo-siamese pair of TempCNN branches with unshared parameters."""

    kind = "refed"

    def __init__(self, t_len, n_bands, n_classes, seed=0, dropout=0.5, tau=0.07,
                 normalize=True, dtype=np.float32, pooling=False):
        if not tau > 0:
            raise ValueError("temperature must be positive")
        rng = np.random.default_rng(seed)
        self.t_len, self.n_bands, self.n_classes = t_len, n_bands, n_classes
        self.tau = tau
        self.normalize = normalize
        self.dtype = np.dtype(dtype)
        self.g_inv = Encoder("g_inv", t_len, n_bands, rng, dropout, dtype, pooling)
        self.g_spe = Encoder("g_spe", t_len, n_bands, rng, dropout, dtype, pooling)
        self.f = Classifier("f", self.g_inv.out_dim, n_classes, rng, dropout, dtype)
        self.f_dom = Classifier("f_dom", self.g_spe.out_dim, 2, rng, dropout, dtype)

    @classmethod
    def from_config(cls, t_len, n_bands, n_classes, cfg, seed=None, dtype=np.float32):
        return cls(t_len, n_bands, n_classes, seed=cfg.seed if seed is None else seed, dropout=cfg.dropout,
                   tau=cfg.tau, normalize=cfg.normalize_embeddings, dtype=dtype, pooling=cfg.pooling)

    def components(self):
        return [self.g_inv, self.g_spe, self.f, self.f_dom]

    def parameters(self):
        return [p for c in self.components() for p in c.parameters()]

    def buffers(self):
        out = {}
        for c in self.components():
            out.update(c.buffers())
        return out

    def train(self, flag=True):
        for c in self.components():
            c.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def dropouts(self):
        out = []
        for enc in (self.g_inv, self.g_spe):
            out += [b.drop for b in enc.blocks]
        out += [self.f.drop, self.f_dom.drop]
        return out

    def freeze_dropout(self, flag=True):
        for d in self.dropouts():
            d.freeze(flag)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def invariant_taps(self, x):
        z0, z1 = self.g_inv.forward(x)
        z2, logits = self.f.forward(z1)
        return FeatureTaps(z0, z1, z2), logits

    def specific_taps(self, x):
        z0, z1 = self.g_spe.forward(x)
        z2, logits = self.f_dom.forward(z1)
        return FeatureTaps(z0, z1, z2), logits

    def loss_task(self, x, labels):
        """Mean cross-entropy of the task head on invariant features (forward only)."""
        _, logits = self.invariant_taps(np.asarray(x, dtype=self.dtype))
        return softmax_xent(logits, labels)[0]

    def loss_domain(self, x, domains):
        """Mean cross-entropy of the domain head on specific features (forward only)."""
        _, logits = self.specific_taps(np.asarray(x, dtype=self.dtype))
        return softmax_xent(logits, domains)[0]

    def forward_losses(self, x, labels, domains, backward=True):
        """All loss components for one batch; accumulates gradients when ``backward``."""
        x = np.asarray(x, dtype=self.dtype)
        labels = np.asarray(labels, dtype=np.int64)
        domains = np.asarray(domains, dtype=np.int64)
        if len(x) == 0:
            raise ValueError("empty batch")
        inv, logits_cls = self.invariant_taps(x)
        spe, logits_dom = self.specific_taps(x)
        return self.assemble_losses(inv, logits_cls, spe, logits_dom, labels, domains, backward)

    def assemble_losses(self, inv, logits_cls, spe, logits_dom, labels, domains, backward=False):
        """Loss components from precomputed taps and logits of both branches."""
        l_cl, d_cls = softmax_xent(logits_cls, labels)
        l_dom, d_dom = softmax_xent(logits_dom, domains)

        mixed = np.concatenate([
            mixed_labels(labels, Kind.INVARIANT, None, self.n_classes),
            mixed_labels(labels, Kind.SPECIFIC, domains, self.n_classes),
        ])
        b = len(labels)
        con = []
        d_inv, d_spe = [], []
        for lvl in LEVELS:
            z = np.concatenate([inv.level(lvl), spe.level(lvl)])
            loss, dz = contrastive_loss(z, mixed, self.tau, self.normalize)
            con.append(loss)
            d_inv.append(dz[:b])
            d_spe.append(dz[b:])
        out = LossBreakdown(l_cl, l_dom, con[0], con[1], con[2])
        if backward:
            dz1 = self.f.backward(d_cls.astype(self.dtype), d_inv[2])
            self.g_inv.backward(d_inv[0], d_inv[1] + dz1)
            dz1 = self.f_dom.backward(d_dom.astype(self.dtype), d_spe[2])
            self.g_spe.backward(d_spe[0], d_spe[1] + dz1)
        return out

    def predict_proba(self, x, batch_size=2048):
        """Class probabilities from the invariant branch only."""
        return predict_proba(self.g_inv, self.f, np.asarray(x, dtype=self.dtype), batch_size)

    def state_dict(self):
        out = {}
        for c in self.components():
            out.update(state_dict(c))
        return out

    def load_state_dict(self, state):
        for c in self.components():
            load_state_dict(c, {k: v for k, v in state.items() if k.split(".", 1)[0] == c.name})


def forward_losses(source_batch, target_batch, model, backward=False):
    """Loss breakdown for a batch assembled from a source part and a target part."""
    parts = [b for b in (source_batch, target_batch) if b is not None and len(b)]
    if not parts:
        raise ValueError("empty batch")
    batch = concat(parts) if len(parts) > 1 else parts[0]
    return model.forward_losses(batch.features, batch.labels, batch.domains, backward=backward)


def infer(model, x):
    """Predicted labels and probability rows from the invariant branch."""
    proba = model.predict_proba(x)
    return proba.argmax(axis=1), proba


def fit(source, target_train, target_val, cfg=None, model=None, callback=None):
    """Train a :class:`RefedModel`; returns ``(best_model, log_records)``.

    Batches are drawn uniformly without replacement from the union of the
    source and target training samples. After every epoch the invariant
    branch is scored on ``target_val``; the best weighted-F1 epoch is kept.
    """
    cfg = cfg or RunConfig(mode="refed")
    for ds in (target_train, target_val):
        source.check_compatible(ds)
    if len(source) + len(target_train) == 0 or len(target_val) == 0:
        raise ValueError("training and validation partitions must be non-empty")
    init_seed, data_rng = run_streams(cfg.seed)
    if model is None:
        model = RefedModel.from_config(source.t_len, source.n_bands, source.n_classes, cfg, seed=init_seed)
    pool = concat([source, target_train])
    feats = pool.features.astype(model.dtype)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    best = BestCheckpoint()
    records = []
    for epoch in range(cfg.epochs):
        model.train()
        sums = np.zeros(5)
        seen = 0
        for idx in minibatches(len(pool), cfg.batch_size, data_rng):
            model.zero_grad()
            lb = model.forward_losses(feats[idx], pool.labels[idx], pool.domains[idx])
            opt.step()
            sums += len(idx) * np.array([lb.l_cl, lb.l_dom, lb.l_con_0, lb.l_con_1, lb.l_con_2])
            seen += len(idx)
        mean = LossBreakdown(*(sums / max(seen, 1)).tolist())
        rec = {"epoch": epoch, **mean.to_dict(), **validation_metrics(model.predict_proba, target_val)}
        best.update(epoch, rec["val_weighted_f1"], model.state_dict())
        records.append(rec)
        log.debug("epoch %d %s", epoch, json.dumps(rec))
        if callback is not None:
            callback(rec)
    model.load_state_dict(best.state)
    model.eval()
    model.best_epoch = best.epoch
    return model, records


def export_embeddings(dataset, model, level, path):
    """Write invariant-branch features at ``level`` as CSV rows ``id,class,domain,f0..``."""
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    feats = embeddings(dataset, model, level)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dim = feats.shape[1]
        fh.write(",".join(["id", "class", "domain"] + [f"f{j}" for j in range(dim)]) + "\n")
        for i in range(len(dataset)):
            vals = ",".join(format(float(v), ".9g") for v in feats[i])
            fh.write(f"{i},{int(dataset.labels[i])},{int(dataset.domains[i])},{vals}\n")
    return feats.shape


def embeddings(dataset, model, level, batch_size=2048, branch="inv"):
    model.eval()
    x = dataset.features.astype(model.dtype)
    taps_fn = model.invariant_taps if branch == "inv" else model.specific_taps
    out = []
    for start in range(0, len(x), batch_size):
        taps, _ = taps_fn(x[start:start + batch_size])
        out.append(taps.level(level).copy())
    if not out:
        return np.zeros((0, 0), dtype=model.dtype)
    return np.concatenate(out)
