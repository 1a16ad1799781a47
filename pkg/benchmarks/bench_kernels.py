"""Compare the compiled kernels against the numpy fallback.

Times each kernel on training-sized inputs, then one full REFeD training
step (forward, backward, AdamW) with each backend active.

    python benchmarks/bench_kernels.py [--repeats 5] [--json out.json]
"""
import argparse
import json
import platform
import timeit

import numpy as np

from refed.nn import AdamW, kernels
from refed.nn import _fallback
from refed.refed import RefedModel


def kernel_cases(batch, t_len, channels, k=5, dtype=np.float32):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, t_len, channels)).astype(dtype)
    cols = rng.standard_normal((batch, t_len, k * channels)).astype(dtype)
    flat = rng.standard_normal((batch * t_len, channels)).astype(dtype)
    gamma = rng.uniform(0.5, 1.5, channels).astype(dtype)
    beta = np.zeros(channels, dtype)
    _, xhat, _, _, invstd = _fallback.bn_train_forward(flat, gamma, beta, 1e-5)
    return {
        "im2col": lambda m: m.im2col(x, k),
        "col2im": lambda m: m.col2im(cols, k, channels),
        "bn_train_forward": lambda m: m.bn_train_forward(flat, gamma, beta, 1e-5),
        "bn_backward": lambda m: m.bn_backward(flat, xhat, gamma, invstd),
    }


def best_of(fn, repeats, number):
    return min(timeit.repeat(fn, repeat=repeats, number=number)) / number


def bench_kernels(repeats, batch=512, t_len=24, channels=64):
    compiled = kernels._compiled
    rows = []
    for name, call in kernel_cases(batch, t_len, channels).items():
        py = best_of(lambda: call(_fallback), repeats, 10)
        row = {"kernel": name, "python_ms": py * 1e3}
        if compiled is not None:
            c = best_of(lambda: call(compiled), repeats, 10)
            row.update(compiled_ms=c * 1e3, speedup=py / c)
        rows.append(row)
    return rows


def bench_step(repeats, batch=512, t_len=24, n_bands=4, n_classes=5):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((batch, t_len, n_bands)).astype(np.float32)
    labels = rng.integers(0, n_classes, batch)
    domains = rng.integers(0, 2, batch)
    out = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        model = RefedModel(t_len, n_bands, n_classes, seed=0)
        opt = AdamW(model.parameters())

        def step():
            model.zero_grad()
            model.forward_losses(x, labels, domains)
            opt.step()

        step()
        out[backend] = best_of(step, repeats, 1) * 1e3
    kernels.set_backend("compiled" if kernels._compiled is not None else "python")
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()

    rows = bench_kernels(args.repeats)
    print(f"{'kernel':18s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for r in rows:
        c = f"{r['compiled_ms']:12.3f} {r['speedup']:7.1f}x" if "compiled_ms" in r else f"{'n/a':>12s}"
        print(f"{r['kernel']:18s} {r['python_ms']:10.3f} {c}")
    step = bench_step(args.repeats)
    line = " ".join(f"{k}={v:.0f}ms" for k, v in step.items())
    print(f"refed training step (batch 512, T=24, C=4): {line}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"machine": platform.processor() or platform.machine(), "kernels": rows, "step_ms": step},
                      fh, indent=1)


if __name__ == "__main__":
    main()
