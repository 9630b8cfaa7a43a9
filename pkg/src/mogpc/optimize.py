"""First-order minimization with a backtracking line search.

Any optimizer usable by :mod:`mogpc.training` only needs an objective that
returns ``(value, gradient)`` on a flat vector, so this module is the single
place to swap the method.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import NumericalError, TrainReport

METHOD = "gd-backtracking"


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`minimize`.

    ``initial_step`` is the learning rate of the first trial step
    ``x - initial_step * g``; ``max_step`` caps the length of every trial step
    in packed-parameter space.
    """

    max_iters: int = 200
    rel_tolerance: float = 1e-6
    initial_step: float = 0.1
    max_step: float = 1.0
    method: str = METHOD
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be > 0")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be > 0")
        if self.method != METHOD:
            raise ValueError(f"unsupported optimizer method {self.method!r}")


ARMIJO = 1e-4
MIN_STEP = 1e-10
MAX_BACKTRACKS = 40


def minimize(fun, x0, opt: OptimizerConfig, callback=None):
    """Minimize ``fun(x) -> (value, grad)`` starting from ``x0``.

    Steps go along ``-g`` with an Armijo backtracking search. The first trial
    is ``x - initial_step * g``; later trials use the Barzilai-Borwein rate
    ``s's / s'y``, or double the last accepted step when the measured
    curvature is not positive. Trial steps never exceed ``max_step`` in
    length, so small gradients give small steps. Stops after ``max_iters``
    accepted steps, when the decrease relative to ``max(|f|, |f_new|, 1)``
    drops below ``rel_tolerance``, or when no step of length ``>= MIN_STEP`` decreases
    the objective.

    Returns ``(x, report)``; ``report.objective_trace`` holds the initial and
    every accepted value, so it is non-increasing.
    """
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    try:
        f, g = fun(x)
    except NumericalError as e:
        raise NumericalError(f"iteration 0: {e}") from e
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError("objective or gradient is not finite at the initial point")
    report = TrainReport(objective_trace=[float(f)])
    # Learning rate of the next trial step; Barzilai-Borwein after the first.
    rate = opt.initial_step
    for it in range(opt.max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm == 0.0:
            report.converged = True
            break
        direction = -g / gnorm
        t = min(rate * gnorm, opt.max_step)
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            x_new = x + t * direction
            try:
                f_new, g_new = fun(x_new)
            except (NumericalError, FloatingPointError, ValueError, np.linalg.LinAlgError):
                f_new, g_new = np.inf, None
            if (np.isfinite(f_new) and np.all(np.isfinite(g_new))
                    and f_new <= f - ARMIJO * t * gnorm):
                accepted = True
                break
            t *= 0.5
            if t < MIN_STEP:
                break
        if not accepted:
            report.converged = True
            break
        rel = (f - f_new) / max(abs(f), abs(f_new), 1.0)
        s_vec, y_vec = x_new - x, g_new - g
        x, f, g = x_new, f_new, g_new
        report.objective_trace.append(float(f))
        report.iterations += 1
        if callback is not None:
            callback(it, x, f)
        sy = float(s_vec @ y_vec)
        rate = float(s_vec @ s_vec) / sy if sy > 0 else 2.0 * t / gnorm
        if rel < opt.rel_tolerance:
            report.converged = True
            break
    report.wall_time = time.perf_counter() - t0
    return x, report
