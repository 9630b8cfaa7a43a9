"""Convolved multi-output covariance with Gaussian smoothing and latent kernels.

Output ``d`` is the convolution of each latent process ``u_q`` with a Gaussian
smoothing kernel ``S[d, q] * N(x - z; 0, diag(1/lambda_d))``. The latent
processes are independent with covariance ``N(z - z'; 0, diag(1/lambda_q))``.
Convolving Gaussians adds their covariances, which gives

    k_dd'(x, x') = sum_q S[d,q] S[d',q] N(x - x'; 0, 1/lambda_d + 1/lambda_d' + 1/lambda_q)
    k_du_q(x, z) = S[d,q] N(x - z; 0, 1/lambda_d + 1/lambda_q)

In ``lmc`` mode the smoothing kernel is a scaled Dirac delta and only the
latent covariance remains.

Stacked vectors are ordered output-major: all points of output 0, then all
points of output 1, and so on. Inducing columns are ordered latent-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from .model import ClassHyperparams, KernelConfig, NumericalError

_LOG2PI = np.log(2 * np.pi)

JITTER_START = 1e-10
JITTER_CEILING = 1e-4


def gaussian_density_kernel(x, x2, precision) -> float:
    """Normalized Gaussian kernel ``|L|^1/2 (2 pi)^-p/2 exp(-r' L r / 2)`` with
    diagonal precision ``L``."""
    x, x2 = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(x2, float))
    lam = np.broadcast_to(np.asarray(precision, float), x.shape)
    if np.any(~(lam > 0)) or not np.all(np.isfinite(lam)):
        raise ValueError("precision entries must be positive and finite")
    r = x - x2
    return float(np.exp(0.5 * np.sum(np.log(lam)) - 0.5 * x.size * _LOG2PI
                        - 0.5 * np.sum(lam * r * r)))


def _phi(R2, var):
    """Gaussian density with diagonal covariance ``var`` on squared diffs.

    ``R2`` has shape ``(..., p)``; returns shape ``(...)``.
    """
    return np.exp(-0.5 * np.sum(_LOG2PI + np.log(var)) - 0.5 * np.sum(R2 / var, axis=-1))


def _sqdiff(X1, X2):
    R = X1[:, None, :] - X2[None, :, :]
    return R, R * R


def _check_cfg(theta: ClassHyperparams, cfg: KernelConfig):
    if theta.input_dim != cfg.input_dim or theta.n_latent != cfg.n_latent:
        raise ValueError("hyperparameters do not match kernel config")


def ff_variance(theta, cfg, d, d2, q):
    """Per-dimension covariance of the Gaussian giving k_{d,d2} through latent q."""
    v = 1.0 / theta.latent_precisions[q]
    if cfg.mode == "convolved":
        out = theta.output_precisions
        v = v + 1.0 / out[d] + 1.0 / out[d2]
    return v


def fu_variance(theta, cfg, d, q):
    v = 1.0 / theta.latent_precisions[q]
    if cfg.mode == "convolved":
        v = v + 1.0 / theta.output_precisions[d]
    return v


def output_cross_cov(d, d2, x, x2, theta: ClassHyperparams, cfg: KernelConfig) -> float:
    """Covariance between output ``d`` at ``x`` and output ``d2`` at ``x2``."""
    _check_cfg(theta, cfg)
    x, x2 = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(x2, float))
    S = theta.mixing
    # fixed summation order over q keeps the value bit-identical under argument exchange
    total = 0.0
    for q in range(cfg.n_latent):
        v = ff_variance(theta, cfg, d, d2, q)
        total += S[d, q] * S[d2, q] * gaussian_density_kernel(x, x2, 1.0 / v)
    return total


def latent_cov(q, z, z2, theta: ClassHyperparams) -> float:
    return gaussian_density_kernel(z, z2, theta.latent_precisions[q])


def output_latent_cross_cov(d, q, x, z, theta: ClassHyperparams, cfg: KernelConfig) -> float:
    _check_cfg(theta, cfg)
    v = fu_variance(theta, cfg, d, q)
    return theta.mixing[d, q] * gaussian_density_kernel(x, z, 1.0 / v)


@dataclass(frozen=True, eq=False)
class CovMatrix:
    """Dense covariance in output-major block order, jitter included."""

    matrix: np.ndarray
    chol: np.ndarray
    n_blocks: int
    block_size: int
    jitter_applied: float


def jitter_cholesky(A: np.ndarray):
    """Lower Cholesky factor of ``A + j I`` with the smallest admissible ``j``.

    A plain factorization (``j = 0``) is tried first. On failure ``j`` starts
    at ``1e-10 * mean(diag A)`` and grows tenfold up to ``1e-4 * mean(diag A)``.
    Returns ``(L, j)``.
    """
    try:
        return la.cholesky(A, lower=True, check_finite=True), 0.0
    except (la.LinAlgError, ValueError):
        pass
    n = A.shape[0]
    scale = float(np.mean(np.diag(A))) if n else 1.0
    if not np.isfinite(scale) or not np.all(np.isfinite(A)):
        raise NumericalError("covariance contains non-finite entries")
    if scale <= 0:
        scale = 1.0
    jitter = JITTER_START * scale
    while jitter <= JITTER_CEILING * scale * (1 + 1e-9):
        try:
            L = la.cholesky(A + jitter * np.eye(n), lower=True, check_finite=False)
            return L, jitter
        except la.LinAlgError:
            jitter *= 10
    eig_min = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    raise NumericalError(
        f"Cholesky failed with jitter up to {JITTER_CEILING:g} x mean diagonal "
        f"({JITTER_CEILING * scale:.3g}); smallest eigenvalue {eig_min:.3g} "
        f"(relative scale {eig_min / scale:.3g})")


def kff_matrix(X1, X2, theta: ClassHyperparams, cfg: KernelConfig) -> np.ndarray:
    """Noise-free cross-covariance between stacked outputs at ``X1`` and ``X2``."""
    _check_cfg(theta, cfg)
    X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
    N1, N2 = len(X1), len(X2)
    D, Q = theta.n_outputs, cfg.n_latent
    S = theta.mixing
    _, R2 = _sqdiff(X1, X2)
    K = np.zeros((D * N1, D * N2))
    same = X1 is X2 or (N1 == N2 and np.array_equal(X1, X2))
    for d in range(D):
        for d2 in range(d if same else 0, D):
            B = np.zeros((N1, N2))
            for q in range(Q):
                B += S[d, q] * S[d2, q] * _phi(R2, ff_variance(theta, cfg, d, d2, q))
            K[d * N1:(d + 1) * N1, d2 * N2:(d2 + 1) * N2] = B
            if same and d2 != d:
                K[d2 * N1:(d2 + 1) * N1, d * N2:(d + 1) * N2] = B.T
    return K


def kff_block(X, theta, cfg, d) -> np.ndarray:
    """Noise-free within-output covariance block for output ``d``."""
    _, R2 = _sqdiff(X, X)
    S = theta.mixing
    B = np.zeros((len(X), len(X)))
    for q in range(cfg.n_latent):
        B += S[d, q] ** 2 * _phi(R2, ff_variance(theta, cfg, d, d, q))
    return B


def kff_diag(n_points, theta, cfg) -> np.ndarray:
    """Diagonal of the noise-free covariance (stationary, so input-free)."""
    S = theta.mixing
    vals = np.array([
        sum(S[d, q] ** 2 * _phi(np.zeros(cfg.input_dim), ff_variance(theta, cfg, d, d, q))
            for q in range(cfg.n_latent))
        for d in range(theta.n_outputs)])
    return np.repeat(vals, n_points)


def build_kff(X, theta: ClassHyperparams, cfg: KernelConfig,
              include_noise: bool = True) -> CovMatrix:
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[0] < 1:
        raise ValueError("X must be nonempty")
    K = kff_matrix(X, X, theta, cfg)
    N = X.shape[0]
    if include_noise:
        K[np.diag_indices_from(K)] += np.repeat(theta.noise_vars, N)
    L, jitter = jitter_cholesky(K)
    K[np.diag_indices_from(K)] += jitter
    return CovMatrix(K, L, theta.n_outputs, N, jitter)


def build_kfu(X, Z, theta: ClassHyperparams, cfg: KernelConfig) -> np.ndarray:
    """Cross-covariance (N*D, Q*K) between stacked outputs and latent values at ``Z``."""
    _check_cfg(theta, cfg)
    X, Z = np.atleast_2d(X), np.atleast_2d(Z)
    if Z.shape[0] < 1:
        raise ValueError("Z must be nonempty")
    N, K = len(X), len(Z)
    D, Q = theta.n_outputs, cfg.n_latent
    _, R2 = _sqdiff(X, Z)
    out = np.empty((D * N, Q * K))
    for d in range(D):
        for q in range(Q):
            out[d * N:(d + 1) * N, q * K:(q + 1) * K] = (
                theta.mixing[d, q] * _phi(R2, fu_variance(theta, cfg, d, q)))
    return out


def kuu_matrix(Z, theta: ClassHyperparams) -> np.ndarray:
    Z = np.atleast_2d(Z)
    K, Q = len(Z), theta.n_latent
    _, R2 = _sqdiff(Z, Z)
    out = np.zeros((Q * K, Q * K))
    for q in range(Q):
        out[q * K:(q + 1) * K, q * K:(q + 1) * K] = _phi(R2, 1.0 / theta.latent_precisions[q])
    return out


def build_kuu(Z, theta: ClassHyperparams, cfg: KernelConfig) -> CovMatrix:
    _check_cfg(theta, cfg)
    Z = np.atleast_2d(np.asarray(Z, float))
    if Z.shape[0] < 1:
        raise ValueError("Z must be nonempty")
    Kuu = kuu_matrix(Z, theta)
    L, jitter = jitter_cholesky(Kuu)
    Kuu[np.diag_indices_from(Kuu)] += jitter
    return CovMatrix(Kuu, L, cfg.n_latent, Z.shape[0], jitter)


# ---------------------------------------------------------------------------
# Gradients. Each routine takes dL/dK for one kernel matrix (as a dense weight
# array) and accumulates dL/dparam into a ParamGrad.
# ---------------------------------------------------------------------------


class ParamGrad:
    """Gradient accumulator mirroring the packed parameter groups."""

    def __init__(self, theta: ClassHyperparams):
        Q, p = theta.latent_log_precisions.shape
        D = theta.n_outputs
        self.latent = np.zeros((Q, p))
        self.output = np.zeros((D, p))
        self.mixing = np.zeros((D, Q))
        self.noise = np.zeros(D)
        self.inducing = None if theta.inducing_inputs is None else np.zeros_like(theta.inducing_inputs)

    def packed(self) -> np.ndarray:
        parts = [self.latent.ravel(), self.output.ravel(), self.mixing.ravel(), self.noise]
        if self.inducing is not None:
            parts.append(self.inducing.ravel())
        return np.concatenate(parts)

    def add_variance_grad(self, theta, cfg, dv, d=None, d2=None, q=None):
        """Chain dL/dvariance into log-precisions (variance = sum of 1/precision)."""
        if q is not None:
            self.latent[q] -= dv / theta.latent_precisions[q]
        if cfg.mode == "convolved":
            for dd in (d, d2):
                if dd is not None:
                    self.output[dd] -= dv / theta.output_precisions[dd]


def _var_grad(E, R2, v):
    """sum(E * d phi/d v) / phi, per input dimension."""
    return -0.5 * E.sum() / v + 0.5 * (E[..., None] * R2).reshape(-1, R2.shape[-1]).sum(axis=0) / v ** 2


def kff_grad(X, W, theta, cfg, grad: ParamGrad, blocks="all"):
    """Accumulate ``sum(W * dKff/dparam)`` for the noise-free stacked covariance.

    ``blocks='diag'`` restricts to within-output blocks (``W`` still full size).
    """
    X = np.atleast_2d(X)
    N, D, Q = len(X), theta.n_outputs, cfg.n_latent
    S = theta.mixing
    _, R2 = _sqdiff(X, X)
    for d in range(D):
        pairs = [d] if blocks == "diag" else range(d, D)
        for d2 in pairs:
            Wb = W[d * N:(d + 1) * N, d2 * N:(d2 + 1) * N]
            if d2 != d:
                Wb = Wb + W[d2 * N:(d2 + 1) * N, d * N:(d + 1) * N].T
            for q in range(Q):
                v = ff_variance(theta, cfg, d, d2, q)
                E = Wb * _phi(R2, v)
                c = E.sum()
                grad.mixing[d, q] += c * S[d2, q]
                grad.mixing[d2, q] += c * S[d, q]
                dv = S[d, q] * S[d2, q] * _var_grad(E, R2, v)
                grad.add_variance_grad(theta, cfg, dv, d, d2, q)


def kff_diag_grad(n_points, w, theta, cfg, grad: ParamGrad):
    """Gradient through the diagonal of Kff given per-entry weights ``w``."""
    S = theta.mixing
    zero = np.zeros(cfg.input_dim)
    for d in range(theta.n_outputs):
        c_d = w[d * n_points:(d + 1) * n_points].sum()
        for q in range(cfg.n_latent):
            v = ff_variance(theta, cfg, d, d, q)
            c = c_d * _phi(zero, v)
            grad.mixing[d, q] += 2 * c * S[d, q]
            dv = S[d, q] ** 2 * (-0.5 * c / v)
            grad.add_variance_grad(theta, cfg, dv, d, d, q)


def kfu_grad(X, Z, G, theta, cfg, grad: ParamGrad, inducing: bool = True):
    """Accumulate ``sum(G * dKfu/dparam)``, including inducing locations."""
    X, Z = np.atleast_2d(X), np.atleast_2d(Z)
    N, K = len(X), len(Z)
    R, R2 = _sqdiff(X, Z)
    for d in range(theta.n_outputs):
        for q in range(cfg.n_latent):
            s = theta.mixing[d, q]
            v = fu_variance(theta, cfg, d, q)
            phi = _phi(R2, v)
            E = G[d * N:(d + 1) * N, q * K:(q + 1) * K] * phi
            grad.mixing[d, q] += E.sum()
            grad.add_variance_grad(theta, cfg, s * _var_grad(E, R2, v), d, None, q)
            if inducing and grad.inducing is not None:
                grad.inducing += s * np.einsum("nk,nkj->kj", E, R) / v


def kuu_grad(Z, G, theta, cfg, grad: ParamGrad, inducing: bool = True):
    Z = np.atleast_2d(Z)
    K = len(Z)
    R, R2 = _sqdiff(Z, Z)
    for q in range(cfg.n_latent):
        v = 1.0 / theta.latent_precisions[q]
        E = G[q * K:(q + 1) * K, q * K:(q + 1) * K] * _phi(R2, v)
        grad.add_variance_grad(theta, cfg, _var_grad(E, R2, v), None, None, q)
        if inducing and grad.inducing is not None:
            grad.inducing -= np.einsum("ab,abj->aj", E + E.T, R) / v
