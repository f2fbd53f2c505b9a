"""Independent reference implementations used as test oracles.

They are written from the set definitions of the path shapes and share no
code with ``linpath.interp``.
"""

from fractions import Fraction

import numpy as np


def head_length(span, points):
    """Smallest integer >= span * points, computed on the decimal value of ``span``."""
    exact = Fraction(repr(span)) * points
    return -((-exact.numerator) // exact.denominator)


def brute_force_shape(losses, rise=0.05, plateau=0.05, span=0.6):
    """Return (tag, summit_index, drop_index) by exhaustive set checks."""
    n = len(losses)
    l0, l1 = losses[0], losses[-1]
    top = max(losses)
    # first index i with losses[i] >= every other value and > every earlier value
    summit = None
    for i in range(n):
        if all(losses[j] <= losses[i] for j in range(n)) and all(losses[j] < losses[i] for j in range(i)):
            summit = i
            break
    rising_into = summit is not None and summit >= 1 and losses[summit - 1] < losses[summit]
    if top > (1 + rise) * max(l0, l1) and rising_into:
        return "Barrier", summit, None
    band = {i for i in range(n) if abs(losses[i] - l0) <= plateau * l0}
    head = set(range(head_length(span, n)))
    if head <= band and l1 < (1 - plateau) * l0:
        drop = min(set(range(n)) - band)
        return "Plateau", None, drop
    return "NoBarrier", None, None


def random_path(rng):
    """Paths of length 3..12 mixing smooth, bumpy, flat-then-drop and tied shapes."""
    k = int(rng.integers(3, 13))
    kind = int(rng.integers(0, 5))
    if kind == 0:
        return list(rng.uniform(0, 3, k))
    if kind == 1:
        start = rng.uniform(0.2, 3)
        end = rng.uniform(0, 3)
        line = np.linspace(start, end, k)
        bump = rng.uniform(0, 0.6) * start * np.sin(np.pi * np.linspace(0, 1, k))
        return list(line + bump)
    if kind == 2:
        start = rng.uniform(0.2, 3)
        flat = start * (1 + rng.uniform(-0.06, 0.06, k))
        cut = int(rng.integers(1, k))
        flat[cut:] = rng.uniform(0, start, k - cut)
        flat[0] = start
        return list(flat)
    if kind == 3:
        return list(np.sort(rng.uniform(0, 3, k))[:: 1 if rng.random() < 0.5 else -1])
    # integer levels times a common unit: produces exact ties
    unit = rng.uniform(0.05, 0.5)
    return list(rng.integers(0, 16, k) * unit)


def reference_loss(weights, biases, x, y, loss):
    """Plain mean loss of a ReLU MLP given lists of (out, in) weights and biases."""
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.maximum(a @ w.T + b, 0.0)
    z = a @ weights[-1].T + biases[-1]
    if loss == "bce":
        z = z[:, 0]
        return float(np.mean(np.logaddexp(0.0, z) - y * z))
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(y)), y]))


def finite_difference_grads(weights, biases, x, y, loss, eps=1e-6):
    """Central differences of ``reference_loss`` for every weight and bias entry."""
    grads = []
    for arr in list(weights) + list(biases):
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = reference_loss(weights, biases, x, y, loss)
            flat[i] = keep - eps
            down = reference_loss(weights, biases, x, y, loss)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads
