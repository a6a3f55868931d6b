"""
Test suite for the part encoder and its losses.
"""

import numpy as np
import pytest

from src.config_manager.config_handler import PipelineConfig
from src.core.exceptions import MissingLabelError
from src.encoder.losses import identification_loss, mine_triplets, softmax_cross_entropy, triplet_loss
from src.encoder.trainer import encode, encode_dataset, train_encoder
from src.orgnn.gradcheck import check_bce, check_encoder, check_identification, check_triplet
from src.synth.generator import similarity_stats


def small_cfg(**overrides):
    values = dict(M=3, D=8, epochs=30, learning_rate=1e-2, lr_decay_epochs=(100,), seed=4)
    values.update(overrides)
    return PipelineConfig(**values)


def test_uniform_logits_give_log_class_count():
    """Uniform logits cost log(classes) and their gradient rows sum to zero."""
    loss, grad = softmax_cross_entropy(np.zeros((3, 5)), np.array([0, 2, 4]))
    assert loss == pytest.approx(np.log(5))
    assert np.allclose(grad.sum(axis=1), 0.0)


def test_identification_loss_checks_dims_and_labels():
    """Dimension and label range mismatches raise ValueError."""
    with pytest.raises(ValueError):
        identification_loss(np.ones((2, 3)), np.array([0, 1]), np.ones((2, 4)))
    with pytest.raises(ValueError):
        identification_loss(np.ones((2, 3)), np.array([0, 2]), np.ones((2, 3)))


def test_batch_hard_mining_hand_case():
    """Hardest positive and negative picked on a 1-D hand case."""
    features = np.array([[0.0], [1.0], [3.0], [5.0]])
    batch = mine_triplets(features, np.array([0, 0, 1, 1]), margin=0.3)
    assert batch.positives.tolist() == [1, 0, 3, 2]
    assert batch.negatives.tolist() == [2, 2, 1, 1]
    loss, grad = triplet_loss(batch)
    assert loss == pytest.approx(0.075)
    # Only anchor 2 violates the margin
    assert grad[0, 0] == 0.0
    assert grad[2, 0] != 0.0


def test_separated_clusters_have_zero_triplet_loss():
    """Well separated identities give zero triplet loss and gradient."""
    features = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
    loss, grad = triplet_loss(mine_triplets(features, np.array([0, 0, 1, 1])))
    assert loss == 0.0
    assert np.all(grad == 0.0)


def test_anchor_without_positive_is_skipped():
    """An anchor with no positive is marked invalid."""
    batch = mine_triplets(np.array([[0.0], [1.0], [2.0]]), np.array([0, 1, 1]))
    assert batch.positives[0] == -1
    assert batch.valid.tolist() == [False, True, True]


def test_single_identity_batch_has_no_valid_anchor():
    """A batch of one identity contributes nothing."""
    loss, grad = triplet_loss(mine_triplets(np.random.default_rng(0).normal(size=(4, 3)), np.zeros(4, dtype=int)))
    assert loss == 0.0
    assert np.all(grad == 0.0)


@pytest.mark.parametrize("check", [check_triplet, check_identification, check_bce])
def test_loss_gradients_match_finite_differences(check):
    """Loss gradients agree with central differences."""
    result = check(instances=10, seed=2)
    assert result.checked > 0
    assert result.passed, f"{result.name}: max relative error {result.max_rel_error:.2e}"


def test_encoder_gradient_matches_finite_differences():
    """Encoder projection gradients agree with central differences."""
    result = check_encoder(instances=3, seed=1)
    assert result.passed, f"max relative error {result.max_rel_error:.2e}"


def test_zero_epochs_returns_initialization(small_synth):
    """Zero epochs return correctly shaped initial parameters."""
    params = train_encoder(small_synth.raw["train"], small_cfg(epochs=0))
    assert params.loss_history == []
    assert params.projections.shape == (3, 10, 8)
    assert len(params.label_ids) == small_synth.train.num_identities


def test_training_reduces_loss(small_synth):
    """Encoder loss goes down over training."""
    params = train_encoder(small_synth.raw["train"], small_cfg())
    assert len(params.loss_history) == 30
    assert params.loss_history[-1] < params.loss_history[0]


def test_training_is_deterministic(small_synth):
    """Two runs with one seed give identical parameters."""
    first = train_encoder(small_synth.raw["train"], small_cfg(epochs=3))
    second = train_encoder(small_synth.raw["train"], small_cfg(epochs=3))
    assert np.array_equal(first.projections, second.projections)
    assert first.loss_history == second.loss_history


def test_unlabeled_training_set_rejected(small_synth):
    """Encoder training needs labels."""
    unlabeled = small_synth.raw["query"].map_items(lambda item: item.__class__(
        image_id=item.image_id, features=item.features, visibility_scores=item.visibility_scores))
    with pytest.raises(MissingLabelError):
        train_encoder(unlabeled, small_cfg(epochs=1))


def test_encoded_parts_have_unit_norm(small_synth):
    """Encoded parts are unit length."""
    params = train_encoder(small_synth.raw["train"], small_cfg(epochs=2))
    encoded = encode_dataset(small_synth.raw["query"], params)
    assert encoded.feature_dim == 8
    norms = np.linalg.norm(encoded.stacked_features(), axis=2)
    assert np.allclose(norms, 1.0, atol=1e-5)
    # Visibility travels with the item unchanged
    assert np.array_equal(encoded.stacked_masks(), small_synth.raw["query"].stacked_masks())


def test_trained_encoder_separates_held_out_identities(small_synth):
    """Unseen identities are closer to themselves than to others after training."""
    params = train_encoder(small_synth.raw["train"], small_cfg())
    held_out = [encode_dataset(small_synth.raw[split], params) for split in ("query", "gallery")]
    stats = similarity_stats(held_out)
    assert stats.intra_identity > stats.inter_identity


def test_encode_rejects_wrong_shape(small_synth):
    """Raw vectors of the wrong width are rejected."""
    params = train_encoder(small_synth.raw["train"], small_cfg(epochs=0))
    with pytest.raises(ValueError):
        encode(np.ones((3, 7)), params)
