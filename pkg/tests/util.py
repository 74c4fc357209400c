"""Shared helpers for gradient-check tests."""

import numpy as np

from shootseg import autograd as ag

KINK_MARGIN = 1e-3


def kink_free(loss_fn, margin: float = KINK_MARGIN) -> bool:
    """True when no relu pre-activation sits within `margin` of zero.

    Finite differences are only meaningful away from relu kinks; seeds that
    land near one are skipped by convention and replaced with the next seed.
    """
    with ag.track_relu_margins() as margins:
        loss_fn()
    return not margins or min(margins) > margin


def kink_free_seeds(make_loss, count: int, start: int = 0, margin: float = KINK_MARGIN):
    """First `count` seeds (from `start`) whose loss graph is kink-free.

    `make_loss(seed)` returns (loss_fn, params).
    """
    out = []
    seed = start
    while len(out) < count:
        loss_fn, params = make_loss(seed)
        if kink_free(loss_fn, margin):
            out.append((seed, loss_fn, params))
        seed += 1
        if seed > start + 50 * count:
            raise RuntimeError("could not find enough kink-free seeds")
    return out
