from .ar import ARModel, ar_log_prob, train_ar
from .base import (
    MaskedConditionalModel,
    MaskedTokenError,
    best_symbol,
    masked_sweep,
    pseudo_log_likelihood,
    with_masks,
)
from .length import LengthDistribution, length_candidates
from .masked_lm import ToyMaskedLM, TrainConfig, sample_mask_fraction, train_masked_lm
from .tabular import TabularJointModel, tabular_exact_map


def conditional(model, Y, masked_positions, X=()):
    return model.conditional(Y, masked_positions, X)


__all__ = [
    "ARModel",
    "LengthDistribution",
    "MaskedConditionalModel",
    "MaskedTokenError",
    "TabularJointModel",
    "ToyMaskedLM",
    "TrainConfig",
    "ar_log_prob",
    "best_symbol",
    "conditional",
    "length_candidates",
    "masked_sweep",
    "pseudo_log_likelihood",
    "sample_mask_fraction",
    "tabular_exact_map",
    "train_ar",
    "train_masked_lm",
    "with_masks",
]
