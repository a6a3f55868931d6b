"""
Test suite for the core types, configuration, optimizer and file handlers.
"""

import json
import logging

import numpy as np
import pytest
from rich.panel import Panel

from src.config_manager.config_handler import ConfigHandler, PipelineConfig, parse_config_text
from src.core.exceptions import CheckpointError, ConfigError, FeatureFileError, MissingLabelError, \
    NonFiniteFeatureError
from src.core.features import baseline_representation, l2_normalize_parts, visible_representation
from src.core.optimizer import Adam, StepDecaySchedule
from src.core.sampling import identity_batches
from src.core.types import Dataset, PART_NAMES, part_names
from src.data_handlers.checkpoint_io import load_encoder, load_orgnn, save_encoder, save_orgnn
from src.data_handlers.feature_io import read_feature_file, write_feature_file
from src.encoder.trainer import EncoderParams
from src.orgnn.graph import AggregationMode
from src.orgnn.model import ORGNNParams
from src.utils.banner import create_banner
from src.utils.logger import setup_logger
from src.utils.parallel import ordered_map

from .conftest import make_item, random_items


def test_visibility_is_binarized_at_one_half():
    """Scores of 0.5 and above count as visible."""
    item = make_item("x", np.ones((4, 3)), [0.5, 0.49, 1.0, 0.0])
    assert item.visibility_mask.tolist() == [True, False, True, False]
    assert item.visible_parts == [0, 2]
    assert item.features.dtype == np.float32


def test_visibility_scores_outside_unit_interval_rejected():
    """Visibility scores must lie in [0, 1]."""
    with pytest.raises(ValueError):
        make_item("x", np.ones((2, 3)), [1.2, 0.5])


def test_part_names():
    """Six parts get the canonical names, other counts get generic ones."""
    assert part_names(6) == PART_NAMES == ("h1", "h2", "h3", "h4", "v1", "v2")
    assert part_names(2) == ("p1", "p2")


def test_dataset_rejects_duplicates_and_unlabeled_train():
    """Duplicate ids and unlabeled training items are rejected."""
    a = make_item("a", np.ones((2, 2)), person_id=1)
    with pytest.raises(FeatureFileError):
        Dataset.from_items([a, a])
    with pytest.raises(MissingLabelError):
        Dataset.from_items([make_item("b", np.ones((2, 2)))], split="train")


def test_dataset_counts_identities(tiny_dataset):
    """Identity count, stacking and label arrays."""
    assert tiny_dataset.num_identities == 2
    assert tiny_dataset.stacked_features().shape == (2, 2, 2)
    assert tiny_dataset.person_ids().tolist() == [1, 2]


def test_l2_normalize_parts():
    """Parts become unit length and zero parts turn occluded."""
    item = make_item("x", [[3.0, 4.0], [0.0, 0.0]], [1.0, 1.0])
    normalized = l2_normalize_parts(item)
    assert np.allclose(normalized.features[0], [0.6, 0.8])
    assert np.all(normalized.features[1] == 0.0)
    # A zero part cannot be matched, so it counts as occluded
    assert normalized.visibility_mask.tolist() == [True, False]


def test_l2_normalize_parts_is_idempotent():
    """Normalizing an already normalized item leaves it unchanged."""
    rng = np.random.default_rng(11)
    for item in random_items(rng, 200, parts=4, dim=5, visible_rate=0.6):
        scale = rng.uniform(1e-3, 1e3, size=(4, 1))
        if rng.random() < 0.3:
            scale[rng.integers(4)] = 0.0
        item = item.with_features(item.features * scale)
        once = l2_normalize_parts(item)
        twice = l2_normalize_parts(once)
        np.testing.assert_allclose(twice.features, once.features, atol=1e-6)
        assert twice.visibility_mask.tolist() == once.visibility_mask.tolist()
        norms = np.linalg.norm(once.features.astype(np.float64), axis=1)
        assert np.allclose(norms[norms > 0], 1.0, atol=1e-6)


def test_non_finite_features_rejected_at_construction():
    """NaN and Inf never make it into a PartFeatureSet."""
    for bad in (np.nan, np.inf, -np.inf):
        with pytest.raises(NonFiniteFeatureError, match="non-finite feature: x"):
            make_item("x", [[bad, 1.0], [1.0, 1.0]])


def test_representations():
    """Baseline keeps every part, the visible representation zeroes occluded ones."""
    item = l2_normalize_parts(make_item("x", [[1.0, 0.0], [0.0, 2.0]], [1.0, 0.1]))
    assert baseline_representation(item).tolist() == [1.0, 0.0, 0.0, 1.0]
    assert visible_representation(item).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_step_decay_schedule():
    """The rate drops by the factor at each milestone."""
    schedule = StepDecaySchedule(3.5e-4, (40, 70), 0.1)
    assert schedule.lr_at(0) == pytest.approx(3.5e-4)
    assert schedule.lr_at(39) == pytest.approx(3.5e-4)
    assert schedule.lr_at(40) == pytest.approx(3.5e-5)
    assert schedule.lr_at(119) == pytest.approx(3.5e-6)


def test_adam_minimizes_quadratic():
    """Adam drives a quadratic to its minimum."""
    params = {"x": np.array([5.0, -3.0])}
    optimizer = Adam(params, lr=0.1)
    for _ in range(500):
        optimizer.step({"x": 2.0 * params["x"]})
    assert np.all(np.abs(params["x"]) < 0.5)


def test_identity_batches_shape_and_determinism():
    """Batches hold Q items per person and repeat under the same seed."""
    labels = np.repeat(np.arange(10), 5)
    first = identity_batches(labels, 4, 3, np.random.default_rng(0))
    second = identity_batches(labels, 4, 3, np.random.default_rng(0))
    assert all(np.array_equal(a, b) for a, b in zip(first, second))
    assert [len(b) for b in first] == [12, 12, 6]
    for batch in first:
        counts = np.bincount(labels[batch])
        assert set(counts[counts > 0]) == {3}


def test_ordered_map_keeps_order():
    """Threaded map returns results in input order."""
    assert ordered_map(lambda x: x * x, range(20), threads=4) == [x * x for x in range(20)]


def test_config_defaults_are_published_settings():
    """Defaults match the published training and search settings."""
    cfg = PipelineConfig()
    assert (cfg.M, cfg.D, cfg.K_train, cfg.K_infer, cfg.T) == (6, 256, 30, 10, 2)
    assert (cfg.theta_train, cfg.theta_infer, cfg.eta) == (0.7, 0.7, 0.3)
    assert cfg.learning_rate == 3.5e-4 and cfg.lr_decay_epochs == (40, 70) and cfg.epochs == 120
    assert (cfg.batch_persons, cfg.sets_per_person) == (16, 4)


def test_holistic_query_parts_setting(tmp_path):
    """Upper-body parts by default; the file and flags accept lists, an empty value means all parts."""
    assert PipelineConfig().holistic_query_parts == (0, 1)
    path = tmp_path / "occrec.cfg"
    path.write_text("holistic_query_parts=2,0\n")
    assert ConfigHandler(path, environ={}).get_config().holistic_query_parts == (0, 2)
    path.write_text("holistic_query_parts=\n")
    assert ConfigHandler(path, environ={}).get_config().holistic_query_parts == ()
    with pytest.raises(ConfigError):
        ConfigHandler(environ={}).get_config({"holistic_query_parts": "-1"})


def test_config_layering(tmp_path):
    """Flags beat the environment seed, which beats the file."""
    path = tmp_path / "occrec.cfg"
    path.write_text("# desk run\nK_infer = 5\ntheta_infer=0.6\nlr_decay_epochs=10,20\nreconstruct_gallery=false\n")
    handler = ConfigHandler(path, environ={"OCCREC_SEED": "11"})
    cfg = handler.get_config({"theta_infer": 0.5, "threads": None})
    assert cfg.K_infer == 5
    assert cfg.theta_infer == 0.5
    assert cfg.lr_decay_epochs == (10, 20)
    assert cfg.reconstruct_gallery is False
    assert cfg.seed == 11
    assert handler.get_config({"seed": 3}).seed == 3


def test_config_errors(tmp_path):
    """Unknown keys, malformed lines and missing files raise errors."""
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("K_infr=3")
    with pytest.raises(ConfigError, match="K_infer"):
        ConfigHandler(environ={}).get_config({"K_infer": 0})


def test_config_snapshot_round_trip(tmp_path):
    """A saved snapshot loads back to the same config."""
    handler = ConfigHandler(environ={})
    cfg = handler.get_config({"K_train": 12, "filter_same_camera": True})
    path = handler.save_config(cfg, tmp_path / "snapshot.cfg")
    assert ConfigHandler(path, environ={}).get_config() == cfg


@pytest.mark.parametrize("suffix", [".bin", ".json"])
def test_feature_file_round_trip(tmp_path, tiny_dataset, suffix):
    """Binary and JSON feature files read back bit-exact."""
    path = write_feature_file(tiny_dataset, tmp_path / f"gallery{suffix}")
    loaded = read_feature_file(path)
    assert loaded.equals(tiny_dataset)
    assert loaded.split == "gallery"


def test_feature_file_corruption_detected(tmp_path, tiny_dataset):
    """Truncation, trailing bytes, bad magic and shape mismatches are caught."""
    path = write_feature_file(tiny_dataset, tmp_path / "gallery.bin")
    data = path.read_bytes()
    (tmp_path / "truncated.bin").write_bytes(data[:-3])
    (tmp_path / "trailing.bin").write_bytes(data + b"\x00")
    (tmp_path / "magic.bin").write_bytes(data.replace(b"OCCREC1", b"OCCREC9", 1))
    for name in ("truncated.bin", "trailing.bin", "magic.bin"):
        with pytest.raises(FeatureFileError):
            read_feature_file(tmp_path / name)
    with pytest.raises(FeatureFileError):
        read_feature_file(path, expect_shape=(6, 2))


def test_feature_file_with_non_finite_values_rejected(tmp_path, tiny_dataset):
    """Both readers surface NaN features as a non-finite feature error."""
    path = write_feature_file(tiny_dataset, tmp_path / "gallery.bin")
    data = path.read_bytes()
    start = data.index(b"\n", data.index(b'"image_id":"a"')) + 1
    corrupt = data[:start] + np.float32(np.nan).tobytes() + data[start + 4:]
    (tmp_path / "nan.bin").write_bytes(corrupt)
    with pytest.raises(NonFiniteFeatureError, match="non-finite feature: a"):
        read_feature_file(tmp_path / "nan.bin")

    doc = json.loads(write_feature_file(tiny_dataset, tmp_path / "gallery.json").read_text())
    doc["items"][1]["features"][0][1] = float("inf")
    (tmp_path / "inf.json").write_text(json.dumps(doc))
    with pytest.raises(NonFiniteFeatureError, match="non-finite feature: b"):
        read_feature_file(tmp_path / "inf.json")


def test_feature_file_missing(tmp_path):
    """Reading a missing feature file raises FileNotFoundError."""
    with pytest.raises(FileNotFoundError):
        read_feature_file(tmp_path / "nope.bin")


def test_orgnn_checkpoint_round_trip(tmp_path):
    """Graph-network checkpoints keep arrays, ids and mode."""
    params = ORGNNParams.initialize(3, 4, 2, [7, 9, 11], seed=5, mode=AggregationMode.GNN)
    params.b[:] = np.arange(6).reshape(3, 2)
    loaded = load_orgnn(save_orgnn(params, tmp_path / "gnn.ckpt"))
    assert loaded.label_ids == (7, 9, 11)
    assert loaded.mode is AggregationMode.GNN
    for name, value in params.as_dict().items():
        assert np.array_equal(loaded.as_dict()[name], value.astype(np.float32).astype(np.float64))


def test_encoder_checkpoint_round_trip_and_magic(tmp_path):
    """Encoder checkpoints round-trip and reject the wrong magic."""
    params = EncoderParams.initialize(2, 5, 3, [1, 2], seed=0)
    path = save_encoder(params, tmp_path / "encoder.ckpt")
    loaded = load_encoder(path)
    assert np.allclose(loaded.projections, params.projections, atol=1e-6)
    assert np.allclose(loaded.classifiers, params.classifiers, atol=1e-6)
    with pytest.raises(CheckpointError):
        load_orgnn(path)


def test_banner_generation():
    """The banner renders as a rich panel."""
    banner = create_banner()
    assert isinstance(banner, Panel)
    assert len(str(banner.renderable)) > len("occrec")


def test_logger_is_idempotent():
    """Setting up a logger twice adds no second handler."""
    first = setup_logger("src.tests.idempotent")
    second = setup_logger("src.tests.idempotent", logging.DEBUG)
    assert first is second
    assert len(second.handlers) == 1
