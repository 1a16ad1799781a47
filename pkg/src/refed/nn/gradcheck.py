"""Central-difference gradient checking."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckReport:
    max_rel_err: dict = field(default_factory=dict)
    tol: float = 1e-4
    kink_retries: int = 0

    @property
    def worst(self):
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self):
        return self.worst <= self.tol

    def lines(self):
        for name, err in self.max_rel_err.items():
            status = "ok" if err <= self.tol else "FAIL"
            yield f"{name:40s} {err:.3e} {status}"


def rel_error(a, n):
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def _central(evaluate, flat, i, eps, name):
    orig = flat[i]
    flat[i] = orig + eps
    fp = evaluate()
    flat[i] = orig - eps
    fm = evaluate()
    flat[i] = orig
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
    return fp, fm


def grad_check(loss_and_grad, params, eps=1e-6, tol=1e-4, max_coords=None, seed=0, loss_fn=None,
               kink_shrinks=2):
    """Compare analytic gradients with central differences.

    ``loss_and_grad()`` must return the scalar loss and accumulate analytic
    gradients into each parameter's ``.grad`` (the harness zeroes them first).
    With ``max_coords`` set, that many coordinates per parameter are sampled
    with a seeded generator instead of checking every entry. ``loss_fn``, if
    given, is a forward-only evaluation used for the perturbed points.

    A failing coordinate whose forward and backward one-sided slopes
    disagree has a kink inside ``[p-eps, p+eps]``; it is retried with the
    step divided by 10, at most ``kink_shrinks`` times. A wrong backward
    pass fails at every step size, so the retry cannot mask it.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    base = loss_and_grad()
    if not np.isfinite(base):
        raise FloatingPointError("loss is not finite at the base point")
    analytic = {p.name: p.grad.copy() for p in params}
    evaluate = loss_fn or loss_and_grad
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if max_coords is not None and max_coords < n:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        else:
            coords = np.arange(n)
        a_flat = analytic[p.name].reshape(-1)
        worst = 0.0
        for i in coords:
            a = float(a_flat[i])
            step = eps
            for attempt in range(kink_shrinks + 1):
                fp, fm = _central(evaluate, flat, i, step, p.name)
                err = rel_error(a, float((fp - fm) / (2 * step)))
                if err <= tol or attempt == kink_shrinks:
                    break
                f0 = evaluate()
                if rel_error(float((fp - f0) / step), float((f0 - fm) / step)) <= tol:
                    break
                report.kink_retries += 1
                step /= 10
            worst = max(worst, err)
        report.max_rel_err[p.name] = worst
    for p in params:
        p.grad[...] = analytic[p.name]
    return report
