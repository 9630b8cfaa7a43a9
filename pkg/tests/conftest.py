import numpy as np
import pytest

from mogpc.model import ClassHyperparams, Dataset, Instance, KernelConfig


def random_theta(rng, D=2, Q=1, p=1, K=0, lo=0.0, hi=5.0):
    """Well-conditioned random hyperparameters on the natural scale."""
    Z = np.sort(rng.uniform(lo, hi, (K, p)), axis=0) if K else None
    return ClassHyperparams.create(
        D, Q, p, rng.uniform(0.3, 3.0, (Q, p)), rng.uniform(0.5, 8.0, (D, p)),
        rng.uniform(-1.5, 1.5, (D, Q)), rng.uniform(0.02, 0.2, D), Z)


def random_instance(rng, N=6, D=2, p=1, class_id=None):
    X = np.sort(rng.uniform(0, 5, (N, p)), axis=0)
    return Instance(X, rng.standard_normal((D, N)), class_id=class_id)


def tiny_dataset(rng, n_per_class=2, N=6, D=2, M=2):
    classes = [[random_instance(rng, N, D, class_id=m) for _ in range(n_per_class)]
               for m in range(M)]
    return Dataset(classes, tuple(f"c{m}" for m in range(M)), 1, D)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cfg1():
    return KernelConfig(n_latent=1, mode="convolved", input_dim=1)
