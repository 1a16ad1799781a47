"""Repeated-split experiment runner and report rendering."""
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import STRATEGIES, train_strategy
from .config import RunConfig
from .metrics import accuracy, confusion, per_class_f1, weighted_f1
from .preprocessing import DEFAULT_RATIOS, apply_scaling, fit_scaling, polygon_split, repeat_seeds
from .refed import fit as fit_refed

log = logging.getLogger(__name__)

ALL_METHODS = STRATEGIES + ("refed",)
METRICS = ("weighted_f1", "accuracy")


@dataclass
class ExperimentReport:
    methods: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    class_names: list = field(default_factory=list)

    @property
    def config_digest(self):
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def add(self, method, seed, cm):
        rows = self.methods.setdefault(method, [])
        rows.append({
            "seed": int(seed),
            "weighted_f1": weighted_f1(cm),
            "accuracy": accuracy(cm),
            "per_class_f1": per_class_f1(cm).tolist(),
            "confusion": np.asarray(cm).tolist(),
        })

    def summary(self, method):
        rows = self.methods[method]
        out = {}
        for m in METRICS:
            vals = np.array([r[m] for r in rows])
            out[m] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
        pcf = np.array([r["per_class_f1"] for r in rows])
        out["per_class_f1_mean"] = pcf.mean(axis=0).tolist()
        out["per_class_f1_std"] = (pcf.std(axis=0, ddof=1) if len(rows) > 1 else np.zeros(pcf.shape[1])).tolist()
        return out

    def mean(self, method, metric="weighted_f1"):
        return self.summary(method)[metric]["mean"]

    def to_dict(self):
        return {
            "config": self.config,
            "config_digest": self.config_digest,
            "seeds": list(self.seeds),
            "class_names": list(self.class_names),
            "methods": {
                name: {"repeats": rows, "summary": self.summary(name)} for name, rows in self.methods.items()
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    def render_table(self):
        """Plain-text table: one row per method, mean +/- std for each metric."""
        lines = [f"{'Method':<16}{'F1-score':>18}{'Accuracy':>18}"]
        for name in self.methods:
            s = self.summary(name)
            cells = [f"{s[m]['mean']:.2f} ± {s[m]['std']:.2f}" for m in METRICS]
            lines.append(f"{name:<16}{cells[0]:>18}{cells[1]:>18}")
        if self.class_names:
            lines.append("")
            header = f"{'Class':<16}" + "".join(f"{n:>16}" for n in self.methods)
            lines.append(header)
            for k, cname in enumerate(self.class_names):
                row = f"{cname:<16}"
                for name in self.methods:
                    s = self.summary(name)
                    row += f"{s['per_class_f1_mean'][k]:>8.2f} ±{s['per_class_f1_std'][k]:>6.2f}"
                lines.append(row)
        return "\n".join(lines)


def preprocess_pair(source, target):
    """Scale each domain with its own 2nd/98th percentile bounds."""
    return apply_scaling(source, fit_scaling(source)), apply_scaling(target, fit_scaling(target))


def run_experiment(source, target, methods=ALL_METHODS, n_repeats=5, base_seed=0, base_cfg=None,
                   scale=True, ratios=DEFAULT_RATIOS, progress=None):
    """Evaluate each method on ``n_repeats`` polygon splits of the target.

    Repeat ``r`` uses split seed and training seed ``base_seed + r``. Every
    method is scored on the target test partition of that split.
    """
    base_cfg = base_cfg or RunConfig()
    source.check_compatible(target)
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}")
    if scale:
        source, target = preprocess_pair(source, target)
    seeds = repeat_seeds(base_seed, n_repeats)
    report = ExperimentReport(
        seeds=seeds,
        config={"base": base_cfg.to_dict(), "methods": list(methods), "n_repeats": n_repeats,
                "base_seed": base_seed, "scale": scale, "ratios": list(ratios)},
        class_names=list(target.class_names),
    )
    for seed in seeds:
        split = polygon_split(target, ratios, seed)
        t_train, t_val, t_test = split.partition(target)
        for method in methods:
            cfg = base_cfg.replace(mode=method, seed=seed)
            started = time.perf_counter()
            if method == "refed":
                model, _ = fit_refed(source, t_train, t_val, cfg)
            else:
                model, _ = train_strategy(source, t_train, t_val, cfg)
            pred = model.predict_proba(t_test.features).argmax(axis=1)
            cm = confusion(t_test.labels, pred, target.n_classes)
            report.add(method, seed, cm)
            msg = f"seed {seed} {method}: F1 {weighted_f1(cm):.2f} ({time.perf_counter() - started:.0f}s)"
            log.info(msg)
            if progress is not None:
                progress(msg)
    return report
