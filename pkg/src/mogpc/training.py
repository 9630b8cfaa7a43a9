"""Generative and minimum-classification-error (MCE) training.

Generative training fits each class on its own by maximizing the summed log
marginal likelihood of its instances. MCE training fits all classes jointly by
minimizing a smoothed count of training errors:

    g_k  = a * log p(f | theta_k) + b
    d_m  = -g_m + (1/eta) log( mean_{k != m} exp(eta g_k) )
    loss = sum over instances of sigmoid(gamma1 * d_m - gamma2)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logsumexp

from .likelihood import class_log_marginal, log_marginal
from .model import (ClassHyperparams, ConfigError, Dataset, KernelConfig, MCEConfig,
                    ModelBundle, NumericalError, TrainReport, pack_params, unpack_like)
from .optimize import OptimizerConfig, minimize
from .parallel import pmap

log = logging.getLogger(__name__)

_TINY = np.nextafter(0.0, 1.0)
_ONE_MINUS = np.nextafter(1.0, 0.0)


def default_init(instances, cfg: KernelConfig, n_outputs: int, n_inducing: int = 0,
                 seed: int = 0, noise_var: float = 1e-2) -> ClassHyperparams:
    """Data-scaled starting point.

    Latent length scales start at a tenth of the input range, smoothing
    kernels a few times narrower, and mixing weights are set so the prior
    variance roughly matches the data variance (split across latents, with a
    small seeded perturbation to break the symmetry between latents). Noise
    starts at ``noise_var`` times the data variance; starting much lower lets
    first-order ascent settle on very short length scales when points are
    sparse.
    """
    X = np.vstack([i.inputs for i in instances])
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lat_prec = (10.0 / span) ** 2
    out_prec = 4.0 * lat_prec
    v = 1.0 / lat_prec + (2.0 / out_prec if cfg.mode == "convolved" else 0.0)
    var = np.array([np.var(np.concatenate([i.outputs[d] for i in instances]))
                    for d in range(n_outputs)])
    var = np.where(var > 0, var, 1.0)
    base = np.sqrt(var)[:, None] * np.prod(2 * np.pi * v) ** 0.25 / np.sqrt(cfg.n_latent)
    rng = np.random.default_rng(seed)
    S = base * (1.0 + 0.1 * rng.standard_normal((n_outputs, cfg.n_latent)))
    Z = inducing_grid(lo, hi, n_inducing) if n_inducing else None
    return ClassHyperparams.create(n_outputs, cfg.n_latent, cfg.input_dim,
                                   np.broadcast_to(lat_prec, (cfg.n_latent, cfg.input_dim)),
                                   np.broadcast_to(out_prec, (n_outputs, cfg.input_dim)),
                                   S, noise_var * var, Z)


def inducing_grid(lo, hi, k: int) -> np.ndarray:
    """About ``k`` points on a regular grid over the box ``[lo, hi]``.

    For ``p > 1`` the per-axis count is ``ceil(k ** (1/p))`` and the grid is
    truncated to ``k`` points in row-major order.
    """
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    p = lo.size
    if p == 1:
        return np.linspace(lo[0], hi[0], k)[:, None]
    per = int(np.ceil(k ** (1.0 / p) - 1e-9))
    axes = [np.linspace(lo[j], hi[j], per) for j in range(p)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
    return grid[:k]


def fit_generative(instances, cfg: KernelConfig, opt: OptimizerConfig = OptimizerConfig(),
                   approx: str = "exact", init: ClassHyperparams = None,
                   optimize_inducing: bool = False):
    """Maximize the summed log marginal likelihood of one class's instances.

    Returns ``(theta, report)``. The report's trace holds log likelihoods and
    is non-decreasing.
    """
    instances = list(instances)
    if not instances:
        raise ValueError("class_data is empty")
    if init is None:
        init = default_init(instances, cfg, instances[0].output_dim, seed=opt.seed)

    def objective(v):
        theta = unpack_like(v, init)

        def one(pair):
            l, inst = pair
            try:
                return log_marginal(inst, theta, cfg, approx, grad=True,
                                    optimize_inducing=optimize_inducing)
            except NumericalError as e:
                raise NumericalError(f"instance {l}: {e}") from e

        results = pmap(one, enumerate(instances))
        val = sum(r.log_marginal for r in results)
        grad = np.sum([r.gradient for r in results], axis=0)
        return -val, -grad

    v, report = minimize(objective, pack_params(init), opt)
    report.objective_trace = [-f for f in report.objective_trace]
    return unpack_like(v, init), report


def g_score(inst, theta: ClassHyperparams, cfg: KernelConfig, approx: str = "exact",
            a: float = 1.0, b: float = 0.0) -> float:
    if not a > 0:
        raise ConfigError("a must be > 0")
    return a * log_marginal(inst, theta, cfg, approx).log_marginal + b


def misclassification_measure(g, m: int, eta: float) -> float:
    """Soft margin of class ``m``: minus its score plus the eta-softened max of the rest."""
    g = np.asarray(g, dtype=float)
    if g.size < 2:
        raise ValueError("need at least two classes")
    rivals = np.delete(g, m)
    top = rivals.max()
    # The softened max lies in [top - log(M-1)/eta, top]; clamping the
    # correction keeps that true after rounding.
    spread = np.log(rivals.size) / eta
    corr = (logsumexp(eta * (rivals - top)) - np.log(rivals.size)) / eta
    return float(-g[m] + top + min(0.0, max(corr, -spread)))


def mce_loss_single(d: float, gamma1: float = 1.0, gamma2: float = 0.0) -> float:
    """Sigmoid loss ``1 / (1 + exp(-gamma1*d + gamma2))`` kept inside (0, 1)."""
    return float(np.clip(expit(gamma1 * d - gamma2), _TINY, _ONE_MINUS))


def loss_score_grad(g, m: int, eta: float, gamma1: float, gamma2: float):
    """Loss of one instance of class ``m`` and its gradient w.r.t. all scores.

    Returns ``(loss, d, dloss_dg)``.
    """
    g = np.asarray(g, dtype=float)
    d = misclassification_measure(g, m, eta)
    z = gamma1 * d - gamma2
    loss = float(np.clip(expit(z), _TINY, _ONE_MINUS))
    dl_dd = gamma1 * expit(z) * expit(-z)
    w = np.zeros_like(g)
    rivals = np.arange(g.size) != m
    e = eta * g[rivals]
    w[rivals] = np.exp(e - logsumexp(e))
    w[m] = -1.0
    return loss, d, dl_dd * w


@dataclass
class MCEState:
    """Per-instance scores, misclassification measures and losses."""

    scores: np.ndarray
    measures: np.ndarray
    losses: np.ndarray
    labels: np.ndarray


def _labeled(ds: Dataset):
    return list(ds.labeled())


def _check_classes(model: ModelBundle, ds: Dataset):
    if model.n_classes != ds.n_classes:
        raise ConfigError(f"model has {model.n_classes} classes, dataset has {ds.n_classes}")
    if ds.n_classes < 2:
        raise ConfigError("MCE needs at least two classes")


def _instance_terms(model, mce, approx, grad, optimize_inducing):
    a, b = model.mce_scaling
    cfg = model.kernel_config

    def one(pair):
        m, inst = pair
        res = [log_marginal(inst, th, cfg, approx, grad=grad, optimize_inducing=optimize_inducing)
               for th in model.per_class]
        g = np.array([a * r.log_marginal + b for r in res])
        loss, d, dl_dg = loss_score_grad(g, m, mce.eta, mce.gamma1, mce.gamma2)
        grads = [a * w * r.gradient for w, r in zip(dl_dg, res)] if grad else None
        return g, d, loss, grads

    return one


def mce_total_loss(model: ModelBundle, ds: Dataset, mce: MCEConfig = MCEConfig(),
                   approx: str = None):
    """Total smoothed error count and the per-instance :class:`MCEState`.

    Scores use ``model.mce_scaling``.
    """
    _check_classes(model, ds)
    approx = approx or model.approx
    pairs = _labeled(ds)
    terms = pmap(_instance_terms(model, mce, approx, False, False), pairs)
    state = MCEState(scores=np.array([t[0] for t in terms]),
                     measures=np.array([t[1] for t in terms]),
                     losses=np.array([t[2] for t in terms]),
                     labels=np.array([m for m, _ in pairs]))
    return float(np.sum(state.losses)), state


def mce_gradient(model: ModelBundle, ds: Dataset, mce: MCEConfig = MCEConfig(),
                 approx: str = None, optimize_inducing: bool = True):
    """Gradient of :func:`mce_total_loss` over all classes' packed parameters.

    Returns ``(total, gradient)``; the gradient is the concatenation of the
    per-class packed gradients in class order.
    """
    _check_classes(model, ds)
    approx = approx or model.approx
    terms = pmap(_instance_terms(model, mce, approx, True, optimize_inducing), _labeled(ds))
    total = 0.0
    grads = [np.zeros(pack_params(th).size) for th in model.per_class]
    for _, _, loss, gs in terms:
        total += loss
        for k, gk in enumerate(gs):
            grads[k] += gk
    return total, np.concatenate(grads)


def pack_bundle(model: ModelBundle) -> np.ndarray:
    return np.concatenate([pack_params(th) for th in model.per_class])


def unpack_bundle(v, model: ModelBundle) -> ModelBundle:
    out, start = [], 0
    for th in model.per_class:
        size = pack_params(th).size
        out.append(unpack_like(v[start:start + size], th))
        start += size
    return replace(model, per_class=tuple(out))


def fit_mce(ds: Dataset, cfg: KernelConfig, mce: MCEConfig = MCEConfig(),
            opt: OptimizerConfig = OptimizerConfig(), approx: str = "exact",
            init=None, optimize_inducing: bool = False, normalization=None):
    """Jointly minimize the MCE loss over all classes' hyperparameters.

    ``init`` is a sequence of per-class hyperparameters (typically a
    generative fit) or a :class:`ModelBundle`. Returns ``(model, report)``
    with a non-increasing loss trace.
    """
    if isinstance(init, ModelBundle):
        start = replace(init, approx=approx, mce_scaling=mce.resolve_scale(ds))
    else:
        if init is None or len(init) != ds.n_classes:
            raise ConfigError("init must hold one ClassHyperparams per class")
        start = ModelBundle(tuple(init), cfg, ds.class_names, approx,
                            mce.resolve_scale(ds), normalization)

    def objective(v):
        return mce_gradient(unpack_bundle(v, start), ds, mce, approx, optimize_inducing)

    v, report = minimize(objective, pack_bundle(start), opt)
    return unpack_bundle(v, start), report


def fit_generative_bundle(ds: Dataset, cfg: KernelConfig, opt: OptimizerConfig = OptimizerConfig(),
                          approx: str = "exact", n_inducing: int = 0,
                          optimize_inducing: bool = False, normalization=None,
                          mce: MCEConfig = MCEConfig()):
    """Fit every class generatively and wrap the result in a bundle."""
    thetas, reports = [], []
    for m, insts in enumerate(ds.classes):
        init = default_init(insts, cfg, ds.output_dim, n_inducing, seed=opt.seed + m)
        theta, rep = fit_generative(insts, cfg, opt, approx, init, optimize_inducing)
        log.info("class %s: log likelihood %.6g -> %.6g in %d iterations",
                 ds.class_names[m], rep.objective_trace[0], rep.objective_trace[-1],
                 rep.iterations)
        thetas.append(theta)
        reports.append(rep)
    model = ModelBundle(tuple(thetas), cfg, ds.class_names, approx,
                        mce.resolve_scale(ds), normalization)
    return model, reports
