import numpy as np


class AdamW:
    """Adam with decoupled weight decay.

    Decay is applied to the parameter directly (``p -= lr * wd * p``) before
    the bias-corrected moment update, and never enters the moments.
    """

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.reset()

    def reset(self):
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.value *= p.value.dtype.type(1.0 - self.lr * self.weight_decay)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            denom = np.sqrt(v / bc2) + self.eps
            p.value -= (self.lr / bc1) * m / denom

    def state_arrays(self):
        out = {}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"adamw.m.{p.name}"] = m
            out[f"adamw.v.{p.name}"] = v
        return out
