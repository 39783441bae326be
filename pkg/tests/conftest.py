"""Shared test configuration.

Thread pinning must happen before numpy is imported anywhere in the
process: the one-core runtime budgets and byte-level determinism checks
assume single-threaded BLAS.
"""

import os

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402
import pytest  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_model_setup():
    """One small materialized model plus encoded prompts, shared read-only."""
    from viewfuse.model import ModelConfig, VisionTextModel
    from viewfuse.text import TextConfig, Vocabulary, canonical_prompts, encode_prompt_pair
    from viewfuse.vision import VisionConfig

    cfg = ModelConfig(
        vision=VisionConfig(image_size=16, patch_size=8, width=16, heads=2,
                            depth_local=1, depth_global=1, embed_dim=8),
        text=TextConfig(vocab_size=64, context_length=40, width=16, heads=2,
                        depth=2, embed_dim=8),
    )
    model = VisionTextModel.build(cfg)
    model.materialize(seed=0)
    vocab = Vocabulary.build(canonical_prompts().all())
    prompt_ids = encode_prompt_pair(vocab, cfg.text.context_length)
    return model, cfg, vocab, prompt_ids
