"""Joint step-halving line search shared by the proximal and plain gradient solvers."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import StallError

STEP_FLOOR = 1e-16
DESCENT_SLACK = 1e-14


def backtrack_step(
    smooth: Callable[[tuple], float],
    point: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    steps: Sequence[float],
    f_current: float | None = None,
    prox: Callable[[tuple, tuple], tuple[tuple, float]] | None = None,
    penalty_current: float = 0.0,
    initial_steps: Sequence[float] | None = None,
):
    """One (proximal) gradient step with joint step halving.

    Each block ``k`` moves to ``point[k] - steps[k] * grads[k]``; ``prox``
    (if given) maps that trial to the penalised update and returns the
    penalty value there. A trial is accepted when the smooth part sits below
    its quadratic majoriser

        f(x+) <= f(x) + <g, x+ - x> + sum_k ||x+_k - x_k||^2 / (2 s_k),

    which guarantees that the penalised objective does not increase. All
    step sizes are halved together until that holds.

    Returns
    -------
    new_point, new_steps, f_new, penalty_new
    """
    point = tuple(np.asarray(p, dtype=float) for p in point)
    grads = tuple(np.asarray(g, dtype=float) for g in grads)
    steps = tuple(float(s) for s in steps)
    if any(s <= 0 for s in steps):
        raise ValueError("step sizes must be positive")
    floor = tuple(STEP_FLOOR * s for s in (initial_steps or steps))
    if f_current is None:
        f_current = smooth(point)
    total_current = f_current + penalty_current
    slack = DESCENT_SLACK * max(1.0, abs(total_current))

    while True:
        trial = tuple(p - s * g for p, g, s in zip(point, grads, steps))
        if prox is not None:
            trial, penalty = prox(trial, steps)
        else:
            penalty = 0.0
        deltas = [tr - p for tr, p in zip(trial, point)]
        moved = sum(float(np.vdot(d, d)) for d in deltas)
        if moved == 0.0:
            return point, steps, f_current, penalty_current
        try:
            f_new = smooth(trial)
        except ArithmeticError:
            f_new = np.inf
        if np.isfinite(f_new):
            bound = f_current
            for d, g, s in zip(deltas, grads, steps):
                bound += float(np.vdot(g, d)) + float(np.vdot(d, d)) / (2.0 * s)
            if f_new <= bound + slack and f_new + penalty <= total_current + slack:
                return trial, steps, f_new, penalty
        steps = tuple(s / 2.0 for s in steps)
        if any(s < fl for s, fl in zip(steps, floor)):
            raise StallError("step sizes fell below the floor without achieving descent")
