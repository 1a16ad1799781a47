"""TempCNN encoder and classifier with feature taps for multi-level supervision.

Taps per branch:

* ``z0`` - flattened output of the second conv block, ``64*T`` values
* ``z1`` - flattened output of the third conv block (the encoder output)
* ``z2`` - post-ReLU hidden activation of the classifier, 256 values
"""
from dataclasses import dataclass

import numpy as np

from .nn import BatchNorm1d, Conv1d, Dropout, Flatten, Linear, Module, ReLU
from .nn.functional import softmax

N_FILTERS = 64
KERNEL_SIZE = 5
HIDDEN = 256


@dataclass
class FeatureTaps:
    z0: np.ndarray
    z1: np.ndarray
    z2: np.ndarray

    def level(self, lvl):
        return (self.z0, self.z1, self.z2)[lvl]


class ConvBlock(Module):
    def __init__(self, name, c_in, c_out, rng, dropout, dtype):
        self.conv = Conv1d(f"{name}.conv", c_in, c_out, KERNEL_SIZE, rng, dtype)
        self.bn = BatchNorm1d(f"{name}.bn", c_out, dtype)
        self.relu = ReLU()
        self.drop = Dropout(dropout, rng)

    def children(self):
        return [self.conv, self.bn, self.relu, self.drop]

    def parameters(self):
        return self.conv.parameters() + self.bn.parameters()

    def forward(self, x):
        return self.drop.forward(self.relu.forward(self.bn.forward(self.conv.forward(x))))

    def backward(self, grad, need_input_grad=True):
        grad = self.bn.backward(self.relu.backward(self.drop.backward(grad)))
        return self.conv.backward(grad, need_input_grad)


class Encoder(Module):
    """Three conv blocks mapping ``[B, T, C]`` to ``D = 64*T`` features.

    With ``pooling=True`` the encoder output is averaged over time instead of
    flattened (``D = 64``); the ``z0`` tap is pooled the same way so both
    encoder taps keep matching sizes.
    """

    def __init__(self, name, t_len, n_bands, rng, dropout=0.5, dtype=np.float32, pooling=False):
        self.name = name
        self.t_len, self.n_bands = t_len, n_bands
        self.pooling = pooling
        self.blocks = [
            ConvBlock(f"{name}.block1", n_bands, N_FILTERS, rng, dropout, dtype),
            ConvBlock(f"{name}.block2", N_FILTERS, N_FILTERS, rng, dropout, dtype),
            ConvBlock(f"{name}.block3", N_FILTERS, N_FILTERS, rng, dropout, dtype),
        ]
        self._flat0, self._flat1 = Flatten(), Flatten()

    @property
    def out_dim(self):
        return N_FILTERS if self.pooling else N_FILTERS * self.t_len

    def children(self):
        return self.blocks

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def buffers(self):
        return {k: v for b in self.blocks for k, v in b.bn.buffers().items()}

    def _tap(self, flat, h):
        if self.pooling:
            return h.mean(axis=1)
        return flat.forward(h)

    def _tap_backward(self, flat, grad):
        if self.pooling:
            return np.repeat(grad[:, None, :] / self.t_len, self.t_len, axis=1)
        return flat.backward(grad)

    def forward(self, x):
        """Return ``(z0, z1)`` for ``x[B, T, C]``."""
        if x.ndim != 3 or x.shape[1:] != (self.t_len, self.n_bands):
            raise ValueError(f"expected input [B, {self.t_len}, {self.n_bands}], got {x.shape}")
        h1 = self.blocks[0].forward(x)
        h2 = self.blocks[1].forward(h1)
        h3 = self.blocks[2].forward(h2)
        return self._tap(self._flat0, h2), self._tap(self._flat1, h3)

    def backward(self, dz0, dz1):
        g = self.blocks[2].backward(self._tap_backward(self._flat1, dz1))
        if dz0 is not None:
            g = g + self._tap_backward(self._flat0, dz0)
        g = self.blocks[1].backward(g)
        self.blocks[0].backward(g, need_input_grad=False)


class Classifier(Module):
    """FC(D->256) + BN + ReLU + dropout, then a linear output layer."""

    def __init__(self, name, in_dim, n_out, rng, dropout=0.5, dtype=np.float32):
        self.name = name
        self.in_dim, self.n_out = in_dim, n_out
        self.fc = Linear(f"{name}.fc", in_dim, HIDDEN, rng, dtype)
        self.bn = BatchNorm1d(f"{name}.bn", HIDDEN, dtype)
        self.relu = ReLU()
        self.drop = Dropout(dropout, rng)
        self.out = Linear(f"{name}.out", HIDDEN, n_out, rng, dtype)

    def children(self):
        return [self.fc, self.bn, self.relu, self.drop, self.out]

    def parameters(self):
        return self.fc.parameters() + self.bn.parameters() + self.out.parameters()

    def buffers(self):
        return self.bn.buffers()

    def forward(self, z1):
        """Return ``(z2, logits)``."""
        if z1.ndim != 2 or z1.shape[1] != self.in_dim:
            raise ValueError(f"expected features [B, {self.in_dim}], got {z1.shape}")
        z2 = self.relu.forward(self.bn.forward(self.fc.forward(z1)))
        logits = self.out.forward(self.drop.forward(z2))
        return z2, logits

    def backward(self, dlogits, dz2=None):
        g = self.drop.backward(self.out.backward(dlogits))
        if dz2 is not None:
            g = g + dz2
        return self.fc.backward(self.bn.backward(self.relu.backward(g)))


class TempCNN(Module):
    """Encoder + classifier; the single-branch network used by the baselines."""

    def __init__(self, t_len, n_bands, n_classes, seed=0, dropout=0.5, dtype=np.float32, pooling=False, name="net"):
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(f"{name}.enc", t_len, n_bands, rng, dropout, dtype, pooling)
        self.classifier = Classifier(f"{name}.cls", self.encoder.out_dim, n_classes, rng, dropout, dtype)
        self.n_classes = n_classes

    def children(self):
        return [self.encoder, self.classifier]

    def parameters(self):
        return self.encoder.parameters() + self.classifier.parameters()

    def buffers(self):
        return {**self.encoder.buffers(), **self.classifier.buffers()}

    def forward(self, x):
        z0, z1 = self.encoder.forward(x)
        z2, logits = self.classifier.forward(z1)
        return FeatureTaps(z0, z1, z2), logits

    def backward(self, dlogits):
        dz1 = self.classifier.backward(dlogits)
        self.encoder.backward(None, dz1)

    def predict_proba(self, x, batch_size=4096):
        return predict_proba(self.encoder, self.classifier, x, batch_size)


def predict_proba(encoder, classifier, x, batch_size=4096):
    """Eval-mode class probabilities; restores the previous mode afterwards."""
    was_training = encoder.training
    encoder.eval()
    classifier.eval()
    try:
        out = []
        for start in range(0, len(x), batch_size):
            _, z1 = encoder.forward(x[start:start + batch_size])
            _, logits = classifier.forward(z1)
            out.append(softmax(logits.astype(np.float64)))
        if not out:
            return np.zeros((0, classifier.n_out))
        return np.concatenate(out)
    finally:
        encoder.train(was_training)
        classifier.train(was_training)
