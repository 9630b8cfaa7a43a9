"""Central-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_io import normalize_dataset
from .likelihood import class_log_marginal
from .model import Dataset, MCEConfig, ModelBundle, layout_of, pack_params, unpack_like
from .training import mce_gradient, mce_total_loss, pack_bundle, unpack_bundle

ABS_FLOOR = 1e-8
MAX_STACKED = 200


def relative_error(analytic, numeric, floor: float = ABS_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|)``; absolute error where both are below ``floor``."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    return np.where(scale < floor, diff, diff / np.where(scale < floor, 1.0, scale))


def central_difference(fun, x, step: float) -> np.ndarray:
    x = np.asarray(x, float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return out


@dataclass
class GroupResult:
    objective: str
    group: str
    max_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    groups: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    def failed(self):
        return [g for g in self.groups if not g.passed]

    def max_error(self) -> float:
        return max((g.max_error for g in self.groups), default=0.0)

    def lines(self):
        for g in self.groups:
            yield (f"{'ok  ' if g.passed else 'FAIL'} {g.objective:<24} {g.group:<24} "
                   f"max rel err {g.max_error:.3e}")


class DataTooLarge(ValueError):
    pass


def gradient_check(model: ModelBundle, ds: Dataset, step: float = 1e-5,
                   tolerance: float = 1e-5, mce: MCEConfig = MCEConfig(),
                   include_mce: bool = True, optimize_inducing: bool = True,
                   fault=None) -> GradCheckReport:
    """Compare analytic and central-difference gradients.

    Checks each class's summed log likelihood over its own instances (with
    ``model.approx``) and, when ``include_mce`` and there are at least two
    classes, the total MCE loss over all classes' parameters. Results are
    reported per parameter group.

    ``fault`` optionally maps ``(objective, gradient) -> gradient`` and is
    applied to the analytic side; it exists to test the checker itself.
    """
    for _, inst in ds.labeled():
        if inst.n_points * inst.output_dim > MAX_STACKED:
            raise DataTooLarge(
                f"instance with N*D = {inst.n_points * inst.output_dim} exceeds "
                f"{MAX_STACKED}; gradient check needs a small dataset")
    report = GradCheckReport(tolerance, step)
    cfg = model.kernel_config
    ds = normalize_dataset(ds, model.normalization)
    fault = fault or (lambda name, g: g)

    for m, theta in enumerate(model.per_class):
        insts = ds.classes[m] if m < ds.n_classes else ()
        if not insts:
            continue
        name = f"loglik[{model.class_names[m]}]"
        x0 = pack_params(theta)
        analytic = class_log_marginal(insts, theta, cfg, model.approx, True,
                                      optimize_inducing).gradient
        analytic = fault(name, analytic)
        numeric = central_difference(
            lambda v: class_log_marginal(insts, unpack_like(v, theta), cfg,
                                         model.approx).log_marginal, x0, step)
        _add_groups(report, name, theta, relative_error(analytic, numeric), tolerance,
                    optimize_inducing, model.approx)

    if include_mce and model.n_classes >= 2 and ds.n_classes == model.n_classes:
        x0 = pack_bundle(model)
        _, analytic = mce_gradient(model, ds, mce, model.approx, optimize_inducing)
        analytic = fault("mce", analytic)
        numeric = central_difference(
            lambda v: mce_total_loss(unpack_bundle(v, model), ds, mce, model.approx)[0],
            x0, step)
        err = relative_error(analytic, numeric)
        start = 0
        for m, theta in enumerate(model.per_class):
            size = pack_params(theta).size
            _add_groups(report, f"mce[{model.class_names[m]}]", theta,
                        err[start:start + size], tolerance, optimize_inducing, model.approx)
            start += size
    return report


def _add_groups(report, objective, theta, err, tolerance, optimize_inducing, approx):
    for group, sl, _ in layout_of(theta):
        if group == "inducing_inputs" and (approx == "exact" or not optimize_inducing):
            continue
        e = float(np.max(err[sl])) if err[sl].size else 0.0
        report.groups.append(GroupResult(objective, group, e, e <= tolerance))
