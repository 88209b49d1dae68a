import numpy as np
import pytest

from reviewnet.model import ModelConfig, ReviewerModel, Variant

TINY = dict(feature_dim=8, embed_dim=8, hidden_dim=8)


def tiny_model(variant, seed=0, vocab_size=10, **overrides):
    """Small model with 8-wide representations for fast gradient work."""
    variant = Variant(variant)
    kwargs = dict(TINY)
    if variant is Variant.MODEL_I:
        kwargs["shared_dim"] = 8
    elif variant is Variant.MODEL_II:
        kwargs["shared_dim"] = 4
        kwargs["specific_dim"] = 4
    kwargs.update(overrides)
    return ReviewerModel(variant, ModelConfig(vocab_size=vocab_size, **kwargs), seed=seed)


def randomize_params(model, rng, scale=1.0):
    """Overwrite every parameter with Gaussian noise (sharper toy distributions)."""
    for p in model.params.values():
        p.data[...] = rng.normal(0.0, scale, size=p.data.shape)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
