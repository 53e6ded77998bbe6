"""Central finite-difference sweep over every network parameter.

Each parameter is perturbed by ``±step`` in float64 and the mean
cross-entropy of a train-mode forward pass is differenced. ``literal_rel``
is the plain relative error at ``step``.

``robust_rel`` retries failing entries with ``step / 4**m``. It takes the
first step whose stencil leaves every ReLU activation pattern unchanged and
whose error passes, with the denominator floored at ``ROBUST_FLOOR`` (the
absolute resolution of a float64 central difference at this step is about
``1e-12``, so gradients that are structurally zero, such as a bias feeding
batch norm, are compared in absolute terms).
"""

from dataclasses import dataclass

import numpy as np

from neoseize import fcnn

ROBUST_FLOOR = 1e-8
CONV_OUTPUTS = tuple(f"{name}.output" for name in fcnn.CONV_NAMES)


@dataclass
class SweepResult:
    names: list
    literal_rel: np.ndarray
    robust_rel: np.ndarray
    kink: np.ndarray

    @property
    def n_params(self):
        return len(self.literal_rel)


def relative_error(fd, an, floor=1e-12):
    return abs(fd - an) / max(abs(fd), abs(an), floor)


def _loss_and_pattern(model, x, y):
    tr = fcnn.forward(model, x, mode="train")
    pattern = np.concatenate([(tr.cache[k] > 0).ravel() for k in CONV_OUTPUTS])
    loss = -np.mean(np.log(tr.probs[np.arange(len(y)), y]))
    return loss, pattern


def problem(seed, batch=1):
    model = fcnn.init_model(seed).astype(np.float64)
    rng = np.random.default_rng(seed + 100)
    # non-zero biases so the check also covers the bias paths away from zero
    for name, arr in model.params().items():
        if name.endswith(".bias") or name.startswith("bn."):
            arr += 0.1 * rng.standard_normal(arr.shape)
    x = rng.standard_normal((batch, fcnn.INPUT_LENGTH))
    y = rng.integers(0, 2, batch)
    return model, x, y


def sweep(seed, step=1e-4, batch=1, max_params=None, max_refine=8, tol=1e-4):
    model, x, y = problem(seed, batch)
    grads = fcnn.backward(model, fcnn.forward(model, x, mode="train"), y)
    _, base = _loss_and_pattern(model, x, y)
    names, lit, rob, kink = [], [], [], []
    rng = np.random.default_rng(seed)
    for name, arr in model.params().items():
        idxs = list(np.ndindex(arr.shape))
        if max_params is not None:
            pick = rng.choice(len(idxs), size=min(max_params, len(idxs)), replace=False)
            idxs = [idxs[i] for i in sorted(pick)]
        for idx in idxs:
            old = arr[idx]
            an = grads[name][idx]

            def central(h):
                arr[idx] = old + h
                lp, pp = _loss_and_pattern(model, x, y)
                arr[idx] = old - h
                lm, pm = _loss_and_pattern(model, x, y)
                arr[idx] = old
                stable = np.array_equal(pp, base) and np.array_equal(pm, base)
                return (lp - lm) / (2 * h), stable

            fd, stable = central(step)
            r_lit = relative_error(fd, an)
            r_rob = relative_error(fd, an, ROBUST_FLOOR) if stable else np.inf
            h, best = step, r_rob
            for _ in range(max_refine):
                if r_rob < tol:
                    break
                h /= 4
                fd_h, stable_h = central(h)
                r_rob = relative_error(fd_h, an, ROBUST_FLOOR) if stable_h else np.inf
                best = min(best, r_rob)
            kink.append(not stable)
            names.append((name, idx))
            lit.append(r_lit)
            rob.append(best)
    return SweepResult(names, np.array(lit), np.array(rob), np.array(kink))
