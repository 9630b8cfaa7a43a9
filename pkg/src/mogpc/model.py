"""Domain types shared across the package.

An :class:`Instance` is one sampled vector-valued field: ``N`` input points in
``R^p`` and a ``D x N`` output matrix whose row ``d`` holds output ``d`` at
every input. Hyperparameters live in log space wherever positivity is needed,
so optimizers can work in an unconstrained flat vector (see
:func:`pack_params`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

APPROX_KINDS = ("exact", "fitc", "pitc")
KERNEL_MODES = ("convolved", "lmc")

DEFAULT_NOISE_VAR = 1e-4
_LOG_MAX = np.log(np.finfo(float).max)
_LOG_TINY = np.log(np.finfo(float).tiny)


class DimensionError(ValueError):
    """Raised when array shapes disagree with the model configuration."""


class ConfigError(ValueError):
    """Raised for inconsistent or unsupported configuration."""


class NumericalError(ArithmeticError):
    """Raised when a covariance cannot be factorized within the jitter budget."""


def _frozen(a, ndim: int) -> np.ndarray:
    a = np.array(a, dtype=float, ndmin=ndim)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Instance:
    """One vector-valued field sample.

    Parameters
    ----------
    inputs : array, (N, p)
        Input locations. A 1-D array is read as ``N`` scalar inputs.
    outputs : array, (D, N)
        Output matrix, one row per output.
    class_id : int, optional
        Label, when known.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    class_id: Optional[int] = None
    source: Optional[str] = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        object.__setattr__(self, "inputs", _frozen(x, 2))
        object.__setattr__(self, "outputs", _frozen(self.outputs, 2))

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.outputs.shape[0]

    def stacked(self) -> np.ndarray:
        """Outputs flattened output-major: all N points of output 1, then 2, ..."""
        return self.outputs.reshape(-1)


@dataclass(frozen=True)
class Dataset:
    classes: tuple
    class_names: tuple
    input_dim: int
    output_dim: int

    def __init__(self, classes: Sequence[Sequence[Instance]],
                 class_names: Optional[Sequence[str]] = None,
                 input_dim: Optional[int] = None,
                 output_dim: Optional[int] = None):
        classes = tuple(tuple(c) for c in classes)
        if class_names is None:
            class_names = tuple(f"class{m}" for m in range(len(classes)))
        first = next((i for c in classes for i in c), None)
        if input_dim is None:
            input_dim = first.input_dim if first is not None else 1
        if output_dim is None:
            output_dim = first.output_dim if first is not None else 1
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "class_names", tuple(class_names))
        object.__setattr__(self, "input_dim", int(input_dim))
        object.__setattr__(self, "output_dim", int(output_dim))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_instances(self) -> int:
        return sum(len(c) for c in self.classes)

    def labeled(self):
        """Yield ``(class_index, instance)`` in class-major order."""
        for m, insts in enumerate(self.classes):
            for inst in insts:
                yield m, inst

    def mean_length(self) -> float:
        return float(np.mean([i.n_points for _, i in self.labeled()]))


@dataclass(frozen=True)
class KernelConfig:
    """Number of latent functions ``Q``, kernel mode and input dimension."""

    n_latent: int = 1
    mode: str = "convolved"
    input_dim: int = 1

    def __post_init__(self):
        if self.n_latent < 1:
            raise ConfigError("n_latent must be >= 1")
        if self.mode not in KERNEL_MODES:
            raise ConfigError(f"unknown kernel mode {self.mode!r}")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")


@dataclass(frozen=True, eq=False)
class ClassHyperparams:
    """Kernel hyperparameters of one class.

    Attributes
    ----------
    latent_log_precisions : array, (Q, p)
        Log of the diagonal precision of each latent kernel.
    output_log_precisions : array, (D, p)
        Log of the diagonal precision of each output smoothing kernel. Ignored
        in ``lmc`` mode.
    mixing : array, (D, Q)
        Smoothing kernel weights ``S[d, q]``.
    log_noise_vars : array, (D,)
        Log noise variance per output.
    inducing_inputs : array, (K, p), optional
        Shared inducing inputs for the low-rank likelihoods.
    """

    latent_log_precisions: np.ndarray
    output_log_precisions: np.ndarray
    mixing: np.ndarray
    log_noise_vars: np.ndarray
    inducing_inputs: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "latent_log_precisions", _frozen(self.latent_log_precisions, 2))
        object.__setattr__(self, "output_log_precisions", _frozen(self.output_log_precisions, 2))
        object.__setattr__(self, "mixing", _frozen(self.mixing, 2))
        object.__setattr__(self, "log_noise_vars", _frozen(self.log_noise_vars, 1))
        if self.inducing_inputs is not None:
            z = np.asarray(self.inducing_inputs, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            object.__setattr__(self, "inducing_inputs", _frozen(z, 2))
        Q, p = self.latent_log_precisions.shape
        D = self.mixing.shape[0]
        if self.mixing.shape != (D, Q):
            raise DimensionError(f"mixing has shape {self.mixing.shape}, expected ({D}, {Q})")
        if self.output_log_precisions.shape != (D, p):
            raise DimensionError("output_log_precisions must be (D, p)")
        if self.log_noise_vars.shape != (D,):
            raise DimensionError("log_noise_vars must have length D")
        if self.inducing_inputs is not None:
            if self.inducing_inputs.shape[0] < 1 or self.inducing_inputs.shape[1] != p:
                raise DimensionError("inducing_inputs must be (K, p) with K >= 1")
        for name in ("latent_log_precisions", "output_log_precisions",
                     "mixing", "log_noise_vars"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")
            if "log" in name and np.any((v >= _LOG_MAX) | (v <= _LOG_TINY)):
                raise ValueError(f"{name} exponentiates to zero or infinity")

    @property
    def n_latent(self) -> int:
        return self.latent_log_precisions.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.mixing.shape[0]

    @property
    def input_dim(self) -> int:
        return self.latent_log_precisions.shape[1]

    @property
    def n_inducing(self) -> int:
        return 0 if self.inducing_inputs is None else self.inducing_inputs.shape[0]

    @property
    def latent_precisions(self) -> np.ndarray:
        return np.exp(self.latent_log_precisions)

    @property
    def output_precisions(self) -> np.ndarray:
        return np.exp(self.output_log_precisions)

    @property
    def noise_vars(self) -> np.ndarray:
        return np.exp(self.log_noise_vars)

    def with_inducing(self, Z) -> "ClassHyperparams":
        return replace(self, inducing_inputs=Z)

    @classmethod
    def create(cls, n_outputs: int, n_latent: int = 1, input_dim: int = 1,
               latent_precision=1.0, output_precision=1.0, mixing=1.0,
               noise_var: float = DEFAULT_NOISE_VAR, inducing_inputs=None):
        """Build from natural-scale values, broadcasting scalars."""
        lat = np.broadcast_to(np.asarray(latent_precision, float), (n_latent, input_dim))
        out = np.broadcast_to(np.asarray(output_precision, float), (n_outputs, input_dim))
        S = np.broadcast_to(np.asarray(mixing, float), (n_outputs, n_latent))
        noise = np.broadcast_to(np.asarray(noise_var, float), (n_outputs,))
        return cls(np.log(lat), np.log(out), S, np.log(noise), inducing_inputs)


def pack_params(theta: ClassHyperparams) -> np.ndarray:
    """Flatten ``theta`` into one vector.

    Layout: latent log-precisions (Q*p), output log-precisions (D*p), mixing
    row-major (D*Q), log noise variances (D), then inducing inputs (K*p) when
    present.
    """
    parts = [theta.latent_log_precisions.ravel(), theta.output_log_precisions.ravel(),
             theta.mixing.ravel(), theta.log_noise_vars]
    if theta.inducing_inputs is not None:
        parts.append(theta.inducing_inputs.ravel())
    return np.concatenate(parts)


def param_layout(n_outputs: int, n_latent: int, input_dim: int, n_inducing: int = 0):
    """Return ``[(group_name, slice, shape), ...]`` for the packed vector."""
    D, Q, p, K = n_outputs, n_latent, input_dim, n_inducing
    shapes = [("latent_log_precisions", (Q, p)), ("output_log_precisions", (D, p)),
              ("mixing", (D, Q)), ("log_noise_vars", (D,))]
    if K:
        shapes.append(("inducing_inputs", (K, p)))
    layout, start = [], 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        layout.append((name, slice(start, start + size), shape))
        start += size
    return layout


def n_params(n_outputs, n_latent, input_dim, n_inducing=0) -> int:
    return param_layout(n_outputs, n_latent, input_dim, n_inducing)[-1][1].stop


def layout_of(theta: ClassHyperparams):
    return param_layout(theta.n_outputs, theta.n_latent, theta.input_dim, theta.n_inducing)


def unpack_params(v, n_outputs: int, n_latent: int, input_dim: int,
                  n_inducing: int = 0) -> ClassHyperparams:
    """Inverse of :func:`pack_params`."""
    v = np.asarray(v, dtype=float)
    layout = param_layout(n_outputs, n_latent, input_dim, n_inducing)
    if v.ndim != 1 or v.size != layout[-1][1].stop:
        raise DimensionError(
            f"parameter vector has length {v.size}, expected {layout[-1][1].stop}")
    vals = {name: v[sl].reshape(shape) for name, sl, shape in layout}
    return ClassHyperparams(**vals)


def unpack_like(v, template: ClassHyperparams) -> ClassHyperparams:
    return unpack_params(v, template.n_outputs, template.n_latent,
                         template.input_dim, template.n_inducing)


@dataclass(frozen=True, eq=False)
class Normalization:
    """Per-output mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean, 1))
        object.__setattr__(self, "std", _frozen(self.std, 1))


@dataclass(frozen=True)
class MCEConfig:
    """Settings of the minimum classification error objective.

    ``eta`` softens the max over rival scores, ``gamma1``/``gamma2`` shape the
    sigmoid loss, and ``(a, b)`` map log likelihoods to scores ``a*logp + b``.
    The default ``a=10`` makes the sigmoid switch within a fraction of a nat
    of log-likelihood ratio, so the loss is close to a 0/1 count and
    instances already classified with a clear margin contribute almost no
    gradient. The log-sum-exp in the misclassification measure is shifted,
    so large scores cannot overflow. ``a=None`` selects the per-point scale ``1 / (D * mean instance length)``
    from the training set.
    """

    eta: float = 2.0
    gamma1: float = 1.0
    gamma2: float = 0.0
    a: Optional[float] = 10.0
    b: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if not self.gamma1 > 0:
            raise ConfigError("gamma1 must be > 0")
        if self.a is not None and not self.a > 0:
            raise ConfigError("a must be > 0")

    def resolve_scale(self, ds: Dataset) -> tuple:
        a = self.a if self.a is not None else 1.0 / (ds.output_dim * ds.mean_length())
        return float(a), float(self.b)


@dataclass(frozen=True)
class ModelBundle:
    """All per-class hyperparameters plus everything prediction needs."""

    per_class: tuple
    kernel_config: KernelConfig
    class_names: tuple
    approx: str = "exact"
    mce_scaling: tuple = (1.0, 0.0)
    normalization: Optional[Normalization] = None

    def __post_init__(self):
        object.__setattr__(self, "per_class", tuple(self.per_class))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "mce_scaling", tuple(float(s) for s in self.mce_scaling))
        if len(self.per_class) != len(self.class_names):
            raise ConfigError("per_class and class_names lengths differ")
        if self.approx not in APPROX_KINDS:
            raise ConfigError(f"unknown approximation {self.approx!r}")
        if not self.mce_scaling[0] > 0:
            raise ConfigError("scaling a must be > 0")

    @property
    def n_classes(self) -> int:
        return len(self.per_class)

    @property
    def output_dim(self) -> int:
        return self.per_class[0].n_outputs

    @property
    def input_dim(self) -> int:
        return self.per_class[0].input_dim


@dataclass
class TrainReport:
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0


def validate_dataset(ds: Dataset, min_classes: int = 2) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    if ds.n_classes < min_classes:
        out.append(f"dataset: {ds.n_classes} classes, need at least {min_classes}")
    for m, insts in enumerate(ds.classes):
        name = ds.class_names[m] if m < len(ds.class_names) else str(m)
        if len(insts) == 0:
            out.append(f"class {name}: empty")
        for l, inst in enumerate(insts):
            where = f"class {name}, instance {l}"
            x, f = inst.inputs, inst.outputs
            if x.shape[0] < 1:
                out.append(f"{where}, inputs: no input points")
            if x.shape[0] != f.shape[1]:
                out.append(f"{where}, outputs: column count {f.shape[1]} != "
                           f"input count {x.shape[0]}")
            if x.shape[1] != ds.input_dim:
                out.append(f"{where}, inputs: dimension {x.shape[1]} != {ds.input_dim}")
            if f.shape[0] != ds.output_dim:
                out.append(f"{where}, outputs: dimension {f.shape[0]} != {ds.output_dim}")
            if not np.all(np.isfinite(x)):
                out.append(f"{where}, inputs: non-finite value")
            if not np.all(np.isfinite(f)):
                out.append(f"{where}, outputs: non-finite value")
    if len(ds.class_names) != ds.n_classes:
        out.append("dataset: class_names length differs from class count")
    return out
