"""Brute-force reference implementations used only by the tests."""

import itertools

import numpy as np


def pairs(T):
    return itertools.combinations(range(1, T + 1), 2)


def brute_decode(s):
    best, arg = -np.inf, None
    for y1, y2 in pairs(s.shape[0]):  # lexicographic order, strict > keeps the first maximiser
        v = s[y1 - 1, 0] + s[y2 - 1, 1]
        if v > best:
            best, arg = v, (y1, y2)
    return arg, best


def brute_task_loss(g, p, tau):
    return max(0, abs(g[0] - p[0]) - tau) + max(0, abs(g[1] - p[1]) - tau)


def brute_loss_augmented(s, gold, tau):
    best, arg = -np.inf, None
    for y1, y2 in pairs(s.shape[0]):
        v = (s[y1 - 1, 0] + max(0, abs(y1 - gold[0]) - tau)) + (s[y2 - 1, 1] + max(0, abs(y2 - gold[1]) - tau))
        if v > best:
            best, arg = v, (y1, y2)
    return arg, best


def brute_hinge(s, gold, tau):
    _, best = brute_loss_augmented(s, gold, tau)
    return best - (s[gold[0] - 1, 0] + s[gold[1] - 1, 1])


def random_scores(rng, T):
    """Half continuous, half small integers so ties actually occur."""
    if rng.random() < 0.5:
        return rng.normal(size=(T, 2))
    return rng.integers(-2, 3, size=(T, 2)).astype(float)


def random_gold(rng, T):
    y1 = int(rng.integers(1, T))
    y2 = int(rng.integers(y1 + 1, T + 1))
    return (y1, y2)
