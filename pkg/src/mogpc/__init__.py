"""Multi-output Gaussian process classifiers with generative and MCE training."""

from .model import (ClassHyperparams, Dataset, Instance, KernelConfig, MCEConfig,
                    ModelBundle, Normalization, TrainReport, pack_params,
                    unpack_params, validate_dataset)

__version__ = "0.1.0"
