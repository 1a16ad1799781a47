"""Single-branch TempCNN training regimes used as comparison points.

* ``only_source``   - source data only; epoch chosen on a 20% polygon-exclusive source holdout
* ``only_target``   - target training partition only
* ``source_target`` - union of source and target training data
* ``finetune``      - source phase, then target phase (optimizer moments reset in between)

Every regime except ``only_source`` picks its epoch by target validation weighted F1.
"""
import logging
from dataclasses import dataclass

from .config import RunConfig
from .data import concat
from .nn import AdamW, load_state_dict, softmax_xent, state_dict
from .preprocessing import polygon_holdout
from .tempcnn import TempCNN
from .training import BestCheckpoint, minibatches, run_streams, validation_metrics

log = logging.getLogger(__name__)

STRATEGIES = ("only_source", "only_target", "source_target", "finetune")


@dataclass
class StrategyConfig:
    strategy: str
    epochs: int = 200
    source_epochs: int = 100
    batch_size: int = 256
    run: RunConfig = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.strategy == "finetune" and not 0 <= self.source_epochs <= self.epochs:
            raise ValueError("finetune phases must sum to the total epoch count")

    @classmethod
    def from_run(cls, cfg):
        return cls(cfg.mode, cfg.epochs, cfg.finetune_source_epochs, cfg.batch_size, cfg)

    @property
    def phases(self):
        if self.strategy == "finetune":
            return [("source", self.source_epochs), ("target", self.epochs - self.source_epochs)]
        return [("train", self.epochs)]


def _run_phase(net, opt, train_ds, val_ds, epochs, batch_size, rng, phase, records, best):
    x = train_ds.features.astype(net.classifier.fc.weight.value.dtype)
    y = train_ds.labels
    for _ in range(epochs):
        net.train()
        total, seen = 0.0, 0
        for idx in minibatches(len(train_ds), batch_size, rng):
            for p in net.parameters():
                p.zero_grad()
            _, logits = net.forward(x[idx])
            loss, dlogits = softmax_xent(logits, y[idx])
            net.backward(dlogits)
            opt.step()
            total += loss * len(idx)
            seen += len(idx)
        rec = {"phase": phase, "epoch": len(records), "loss": float(total / max(seen, 1))}
        if val_ds is not None:
            rec.update(validation_metrics(net.predict_proba, val_ds))
            if best is not None:
                best.update(rec["epoch"], rec["val_weighted_f1"], state_dict(net))
        records.append(rec)


def train_strategy(source, target_train, target_val, cfg):
    """Train one baseline; returns ``(net, log_records)``.

    Only the datasets a regime needs are touched, so ``source`` may be
    ``None`` for ``only_target`` and the target sets may be ``None`` for
    ``only_source``.
    """
    if isinstance(cfg, RunConfig):
        cfg = StrategyConfig.from_run(cfg)
    run = cfg.run or RunConfig(mode=cfg.strategy, epochs=cfg.epochs)
    used = {
        "only_source": [source],
        "only_target": [target_train, target_val],
        "source_target": [source, target_train, target_val],
        "finetune": [source, target_train, target_val],
    }[cfg.strategy]
    if any(d is None for d in used):
        raise ValueError(f"{cfg.strategy} needs datasets that were not provided")
    for d in used[1:]:
        used[0].check_compatible(d)
    ref = used[0]
    init_seed, data_rng = run_streams(run.seed)
    net = TempCNN(ref.t_len, ref.n_bands, ref.n_classes, seed=init_seed, dropout=run.dropout, pooling=run.pooling)
    opt = AdamW(net.parameters(), lr=run.lr, betas=run.betas, eps=run.adam_eps, weight_decay=run.weight_decay)
    best = BestCheckpoint()
    records = []

    if cfg.strategy == "only_source":
        train_ds, val_ds = polygon_holdout(source, run.source_val_fraction, seed=run.seed)
        _run_phase(net, opt, train_ds, val_ds, cfg.epochs, cfg.batch_size, data_rng, "train", records, best)
    elif cfg.strategy == "only_target":
        _run_phase(net, opt, target_train, target_val, cfg.epochs, cfg.batch_size, data_rng, "train", records, best)
    elif cfg.strategy == "source_target":
        pool = concat([source, target_train])
        _run_phase(net, opt, pool, target_val, cfg.epochs, cfg.batch_size, data_rng, "train", records, best)
    else:
        src_epochs, tgt_epochs = (n for _, n in cfg.phases)
        _run_phase(net, opt, source, None, src_epochs, cfg.batch_size, data_rng, "source", records, None)
        if run.reset_optimizer_between_phases:
            opt.reset()
        _run_phase(net, opt, target_train, target_val, tgt_epochs, cfg.batch_size, data_rng, "target", records, best)

    if best.state is not None:
        load_state_dict(net, best.state)
    net.eval()
    net.best_epoch = best.epoch
    return net, records


def phase_lengths(records):
    out = {}
    for r in records:
        out[r["phase"]] = out.get(r["phase"], 0) + 1
    return out

