"""Mini-batch iteration, validation tracking and run seeding shared by all trainers."""
import numpy as np

from .metrics import evaluate


def run_streams(seed):
    """Independent generators for (parameter init + dropout, batch order)."""
    init_ss, data_ss = np.random.SeedSequence(seed).spawn(2)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(data_ss)


def minibatches(n, batch_size, rng):
    """Shuffled index batches covering ``range(n)`` once, without replacement.

    A trailing batch of a single sample is skipped (batch norm needs two).
    """
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


class BestCheckpoint:
    """Keeps a copy of the state with the best validation score (ties go to the later epoch)."""

    def __init__(self):
        self.score = -np.inf
        self.epoch = -1
        self.state = None

    def update(self, epoch, score, state):
        if score >= self.score:
            self.score = score
            self.epoch = epoch
            self.state = {k: v.copy() for k, v in state.items()}
            return True
        return False


def validation_metrics(proba_fn, dataset):
    if len(dataset) == 0:
        raise ValueError("validation set is empty")
    proba = proba_fn(dataset.features)
    pred = proba.argmax(axis=1)
    m = evaluate(dataset.labels, pred, dataset.n_classes)
    return {"val_weighted_f1": m["weighted_f1"], "val_accuracy": m["accuracy"]}
