"""Log marginal likelihood of an instance under one class model.

Three covariance models are supported:

``exact``
    ``K = Kff + noise``, factorized densely.
``fitc``
    ``Kfu Kuu^-1 Kuf + diag(Kff - Kfu Kuu^-1 Kuf) + noise``.
``pitc``
    As FITC but the residual keeps the full within-output blocks.

The low-rank forms never build the stacked dense covariance. With
``V = Luu^-1 Kuf`` (``Luu`` the Cholesky factor of ``Kuu``) and ``Lam`` the
(block-)diagonal part, everything goes through the small matrix
``B = I + V Lam^-1 V'``.

All gradients are with respect to the packed parameter vector
(:func:`mogpc.model.pack_params`). They are obtained from ``dL/dK`` with
``dL/dK = (alpha alpha' - K^-1) / 2`` and chained through each kernel matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from . import kernels
from .kernels import ParamGrad, jitter_cholesky
from .model import ClassHyperparams, ConfigError, DimensionError, Instance, KernelConfig

_LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class LikelihoodResult:
    log_marginal: float
    gradient: Optional[np.ndarray] = None


def _check(inst: Instance, theta: ClassHyperparams, cfg: KernelConfig):
    if inst.output_dim != theta.n_outputs:
        raise DimensionError(
            f"instance has {inst.output_dim} outputs, model has {theta.n_outputs}")
    if inst.input_dim != cfg.input_dim:
        raise DimensionError(
            f"instance has input dimension {inst.input_dim}, model has {cfg.input_dim}")


def gaussian_log_density(f, K, grad: bool = False):
    """Zero-mean Gaussian log density of ``f`` under covariance ``K``.

    Returns the value, or ``(value, dL/dK)`` with ``grad=True``. ``K`` is used
    as given (no jitter).
    """
    f = np.asarray(f, float)
    L = la.cholesky(np.asarray(K, float), lower=True)
    alpha = la.cho_solve((L, True), f)
    val = -0.5 * f @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * f.size * _LOG2PI
    if not grad:
        return float(val)
    Kinv = la.cho_solve((L, True), np.eye(f.size))
    return float(val), 0.5 * (np.outer(alpha, alpha) - Kinv)


def log_marginal_exact(inst: Instance, theta: ClassHyperparams, cfg: KernelConfig,
                       grad: bool = False) -> LikelihoodResult:
    _check(inst, theta, cfg)
    f = inst.stacked()
    K = kernels.build_kff(inst.inputs, theta, cfg, include_noise=True)
    L = K.chol
    alpha = la.cho_solve((L, True), f, check_finite=False)
    val = -0.5 * f @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * f.size * _LOG2PI
    if not grad:
        return LikelihoodResult(float(val))

    N = inst.n_points
    W = np.outer(alpha, alpha) - la.cho_solve((L, True), np.eye(f.size), check_finite=False)
    W *= 0.5
    g = ParamGrad(theta)
    kernels.kff_grad(inst.inputs, W, theta, cfg, g)
    diagW = np.diag(W)
    g.noise += diagW.reshape(theta.n_outputs, N).sum(axis=1) * theta.noise_vars
    return LikelihoodResult(float(val), g.packed())


def _lowrank(inst, theta, cfg, approx, grad, optimize_inducing):
    _check(inst, theta, cfg)
    if theta.inducing_inputs is None:
        raise ConfigError(f"{approx} likelihood needs inducing inputs")
    X, Z = inst.inputs, theta.inducing_inputs
    N, D = inst.n_points, theta.n_outputs
    n = N * D
    f = inst.stacked()
    noise = np.repeat(theta.noise_vars, N)

    Kuu = kernels.build_kuu(Z, theta, cfg)
    Luu = Kuu.chol
    Kfu = kernels.build_kfu(X, Z, theta, cfg)
    V = la.solve_triangular(Luu, Kfu.T, lower=True, check_finite=False)  # m x n

    blocks = [slice(d * N, (d + 1) * N) for d in range(D)]
    if approx == "fitc":
        resid = kernels.kff_diag(N, theta, cfg) - np.einsum("ij,ij->j", V, V)
        mask = resid > 0
        lam = np.where(mask, resid, 0.0) + noise
        logdet_lam = np.sum(np.log(lam))

        def lam_solve(A):
            return A / (lam[:, None] if A.ndim == 2 else lam)
    else:
        lam_chol = []
        logdet_lam = 0.0
        for d, b in enumerate(blocks):
            Vb = V[:, b]
            Lb, _ = jitter_cholesky(
                kernels.kff_block(X, theta, cfg, d) - Vb.T @ Vb + theta.noise_vars[d] * np.eye(N))
            lam_chol.append(Lb)
            logdet_lam += 2 * np.sum(np.log(np.diag(Lb)))

        def lam_solve(A):
            out = np.empty_like(A)
            for b, Lb in zip(blocks, lam_chol):
                out[b] = la.cho_solve((Lb, True), A[b], check_finite=False)
            return out

    VL = lam_solve(V.T).T                      # V Lam^-1, m x n
    m = V.shape[0]
    LB, _ = jitter_cholesky(np.eye(m) + VL @ V.T)
    beta = lam_solve(f)
    c = V @ beta
    t = la.solve_triangular(LB, c, lower=True, check_finite=False)
    quad = f @ beta - t @ t
    logdet = 2 * np.sum(np.log(np.diag(LB))) + logdet_lam
    val = -0.5 * quad - 0.5 * logdet - 0.5 * n * _LOG2PI
    if not grad:
        return LikelihoodResult(float(val))

    alpha = beta - VL.T @ la.cho_solve((LB, True), c, check_finite=False)
    # U = Kfu Kuu^-1
    U = la.solve_triangular(Luu, V, lower=True, trans="T", check_finite=False).T
    KinvU = lam_solve(U) - VL.T @ la.cho_solve((LB, True), VL @ U, check_finite=False)
    WU = np.outer(alpha, alpha @ U) - KinvU
    P = la.solve_triangular(LB, VL, lower=True, check_finite=False)

    g = ParamGrad(theta)
    if approx == "fitc":
        bw = alpha ** 2 - (1.0 / lam - np.einsum("ij,ij->j", P, P))
        bw_res = np.where(mask, bw, 0.0)
        VwU = WU - bw_res[:, None] * U
        kernels.kff_diag_grad(N, 0.5 * bw_res, theta, cfg, g)
        g.noise += 0.5 * bw.reshape(D, N).sum(axis=1) * theta.noise_vars
    else:
        VwU = WU.copy()
        Wff = np.zeros((n, n))
        for d, (b, Lb) in enumerate(zip(blocks, lam_chol)):
            Kinv_bb = la.cho_solve((Lb, True), np.eye(N), check_finite=False) - P[:, b].T @ P[:, b]
            BW = np.outer(alpha[b], alpha[b]) - Kinv_bb
            VwU[b] -= BW @ U[b]
            Wff[b, b] = 0.5 * BW
            g.noise[d] += 0.5 * np.trace(BW) * theta.noise_vars[d]
        kernels.kff_grad(X, Wff, theta, cfg, g, blocks="diag")

    kernels.kfu_grad(X, Z, VwU, theta, cfg, g, inducing=optimize_inducing)
    kernels.kuu_grad(Z, -0.5 * (U.T @ VwU), theta, cfg, g, inducing=optimize_inducing)
    return LikelihoodResult(float(val), g.packed())


def log_marginal_fitc(inst, theta, cfg, grad=False, optimize_inducing=True):
    return _lowrank(inst, theta, cfg, "fitc", grad, optimize_inducing)


def log_marginal_pitc(inst, theta, cfg, grad=False, optimize_inducing=True):
    return _lowrank(inst, theta, cfg, "pitc", grad, optimize_inducing)


def log_marginal(inst: Instance, theta: ClassHyperparams, cfg: KernelConfig,
                 approx: str = "exact", grad: bool = False,
                 optimize_inducing: bool = True) -> LikelihoodResult:
    """Dispatch on ``approx``.

    Inducing-input gradients are zero for ``exact`` and when
    ``optimize_inducing`` is off.
    """
    if approx == "exact":
        return log_marginal_exact(inst, theta, cfg, grad=grad)
    if approx in ("fitc", "pitc"):
        return _lowrank(inst, theta, cfg, approx, grad, optimize_inducing)
    raise ConfigError(f"unknown approximation {approx!r}")


def grad_log_marginal(inst, theta, cfg, approx="exact", optimize_inducing=True):
    return log_marginal(inst, theta, cfg, approx, grad=True,
                        optimize_inducing=optimize_inducing)


def class_log_marginal(instances, theta, cfg, approx="exact", grad=False,
                       optimize_inducing=True) -> LikelihoodResult:
    """Sum over independent instances, accumulated in list order."""
    total, gsum = 0.0, None
    for inst in instances:
        r = log_marginal(inst, theta, cfg, approx, grad, optimize_inducing)
        total += r.log_marginal
        if grad:
            gsum = r.gradient.copy() if gsum is None else gsum + r.gradient
    return LikelihoodResult(total, gsum)
