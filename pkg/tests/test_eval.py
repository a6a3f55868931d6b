"""
Test suite for ranking, retrieval metrics, variant wiring and report files.
"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.config_manager.config_handler import PipelineConfig
from src.core.exceptions import EmptyGalleryError, MissingLabelError
from src.core.types import Dataset
from src.evaluation.metrics import average_precision, cmc, evaluate_rankings, inverse_negative_penalty, mean_ap, \
    rank, rank_matrix, visible_similarity_matrix
from src.evaluation.report import CSV_COLUMNS, read_report_json, read_reports_csv, report_schema, write_reports
from src.evaluation.variants import ABLATION_ORDER, EvalReport, Variant, reconstruct_dataset, run_ablation, \
    run_variant
from src.orgnn.graph import AggregationMode
from src.orgnn.model import ORGNNParams

from .conftest import make_item


def reference_ap(relevance):
    hits, total = 0, 0.0
    for position, relevant in enumerate(relevance, 1):
        if relevant:
            hits += 1
            total += hits / position
    return total / hits if hits else 0.0


def test_average_precision_hand_case():
    """AP of (1, 0, 1) is 5/6."""
    assert average_precision([1, 0, 1]) == pytest.approx(0.8333333)
    assert average_precision([0, 0, 0]) == 0.0
    assert average_precision([1]) == 1.0


def test_metrics_match_reference():
    """AP, mAP and CMC agree with brute-force versions to 1e-12 on 100 random rankings."""
    rng = np.random.default_rng(0)
    for _ in range(100):
        lists = [rng.random(int(rng.integers(1, 20))) < 0.3 for _ in range(int(rng.integers(1, 8)))]
        for relevance in lists:
            assert abs(average_precision(relevance) - reference_ap(relevance)) <= 1e-12
        assert abs(mean_ap(lists) - sum(reference_ap(r) for r in lists) / len(lists)) <= 1e-12
        for r, value in cmc(lists, ranks=(1, 3, 5)).items():
            expected = sum(any(rel[:r]) for rel in lists) / len(lists)
            assert abs(value - expected) <= 1e-12


def test_cmc_is_monotone():
    """CMC never decreases with rank and ends at the share of queries with any hit."""
    rng = np.random.default_rng(1)
    for _ in range(200):
        length = int(rng.integers(1, 40))
        lists = [rng.random(length) < rng.uniform(0.0, 0.3) for _ in range(int(rng.integers(1, 30)))]
        values = list(cmc(lists, ranks=range(1, length + 1)).values())
        assert values == sorted(values)
        assert 0.0 <= values[0] and values[-1] <= 1.0
        assert values[-1] == pytest.approx(np.mean([rel.any() for rel in lists]))


def test_inverse_negative_penalty():
    """INP is hits over the position of the last hit."""
    assert inverse_negative_penalty([1, 0, 1]) == pytest.approx(2 / 3)
    assert inverse_negative_penalty([0, 0, 1]) == pytest.approx(1 / 3)
    assert inverse_negative_penalty([1, 1, 0]) == 1.0


def test_rank_orders_by_similarity_then_id():
    """Ranking sorts by similarity and breaks ties by id."""
    gallery = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    assert rank(np.array([1.0, 0.0]), gallery, ["b", "c", "a"]) == ["a", "b", "c"]
    assert rank(np.array([0.0, 1.0]), gallery, ["b", "c", "a"])[0] == "c"


def test_empty_gallery_rejected():
    """Ranking against an empty gallery raises."""
    with pytest.raises(EmptyGalleryError):
        rank(np.ones(2), np.zeros((0, 2)), [])
    with pytest.raises(EmptyGalleryError):
        rank_matrix(np.zeros((3, 0)), [])


def test_visible_similarity():
    """Similarity averages only parts visible in both images."""
    qf = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    gf = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
    sims = visible_similarity_matrix(qf, np.array([[True, False]]), gf, np.array([[True, True], [False, True]]))
    assert sims[0, 0] == pytest.approx(1.0)
    assert sims[0, 1] == -1.0


def test_queries_without_relevant_items_are_skipped():
    """Queries with no relevant gallery item are listed and left out."""
    sims = np.array([[0.9, 0.1], [0.2, 0.8]])
    result = evaluate_rankings(sims, ["q1", "q2"], ["g1", "g2"], [1, 3], [1, 2])
    assert result.skipped == ["q2"]
    assert result.evaluated == 1
    assert result.mean_ap == 1.0
    assert result.cmc[1] == 1.0


def test_same_camera_junk_is_filtered():
    """Same-person same-camera entries are dropped when filtering is on."""
    sims = np.array([[0.9, 0.8, 0.7]])
    args = (sims, ["q"], ["g1", "g2", "g3"], [1], [1, 2, 1], [0], [0, 1, 1])
    assert evaluate_rankings(*args).mean_ap == pytest.approx(0.8333333)
    filtered = evaluate_rankings(*args, filter_same_camera=True)
    assert filtered.mean_ap == pytest.approx(0.5)
    assert filtered.mean_inp == pytest.approx(0.5)
    with pytest.raises(ValueError):
        evaluate_rankings(sims, ["q"], ["g1", "g2", "g3"], [1], [1, 2, 1], filter_same_camera=True)


def test_post_process_hook_reorders():
    """The re-ranking hook changes the order and must keep the shape."""
    sims = np.array([[0.9, 0.1]])
    flipped = evaluate_rankings(sims, ["q"], ["a", "b"], [2], [1, 2], post_process=lambda s, q, g: -s)
    assert flipped.mean_ap == 1.0
    with pytest.raises(ValueError):
        evaluate_rankings(sims, ["q"], ["a", "b"], [2], [1, 2], post_process=lambda s, q, g: s[:, :1])


def test_report_validation():
    """Reports reject out-of-range mAP and decreasing CMC."""
    base = dict(variant="oan", per_query_ap={"q": 0.5}, mAP=0.5, cmc={"1": 0.4, "5": 0.6, "10": 0.7},
                evaluated_queries=1)
    assert EvalReport(**base).rank(5) == 0.6
    with pytest.raises(ValidationError):
        EvalReport(**{**base, "cmc": {"1": 0.5, "5": 0.4}})
    with pytest.raises(ValidationError):
        EvalReport(**{**base, "mAP": 1.5})
    with pytest.raises(ValidationError):
        EvalReport(**{**base, "extra": 1})


def test_report_schema_lists_metrics():
    """The JSON schema documents every metric field."""
    schema = report_schema()
    for key in ("mAP", "cmc", "mINP", "fallback_count", "neighborhood"):
        assert key in schema["properties"]


def test_variant_wiring():
    """Variant order and wiring flags."""
    assert [v.value for v in ABLATION_ORDER] == [
        "baseline", "gnn_no_oan", "oan", "oan+avgagg", "oan+gnn", "oan+orgnn", "oan+orgnn+ub"]
    assert not Variant.BASELINE.reconstructs and not Variant.OAN.reconstructs
    assert not Variant.GNN_NO_OAN.occlusion_aware
    assert Variant.OAN_ORGNN_UB.oracle and Variant.OAN_ORGNN_UB.mode is AggregationMode.ORGNN
    assert Variant.OAN_AVGAGG.mode is AggregationMode.AVERAGE


def eval_cfg(**overrides):
    values = dict(M=3, D=8, K_infer=10, theta_infer=0.5, seed=1)
    values.update(overrides)
    return PipelineConfig(**values)


def untrained(synth, mode):
    ids = sorted({item.person_id for item in synth.train})
    return ORGNNParams.initialize(3, 8, 2, ids, seed=0, mode=mode)


def test_parameter_free_variants_run(small_synth):
    """Baseline, visible-only and averaging variants run without parameters."""
    for variant in (Variant.BASELINE, Variant.OAN, Variant.OAN_AVGAGG):
        report = run_variant(variant, small_synth.query, small_synth.gallery, eval_cfg())
        assert report.variant == variant.value
        assert 0.0 <= report.mAP <= 1.0
        assert report.evaluated_queries == len(small_synth.query)
        assert set(report.cmc) == {"1", "5", "10"}
        assert report.config["K_infer"] == 10
        assert report.config["holistic_query_parts"] == [0, 1]


def test_learned_variant_needs_parameters(small_synth):
    """Learned variants refuse to run without parameters."""
    with pytest.raises(ValueError):
        run_variant(Variant.OAN_ORGNN, small_synth.query, small_synth.gallery, eval_cfg())


def test_upper_bound_removes_every_outlier(small_synth):
    """The oracle variant leaves no other identity in any neighborhood."""
    params = untrained(small_synth, AggregationMode.ORGNN)
    report = run_variant(Variant.OAN_ORGNN_UB, small_synth.query, small_synth.gallery, eval_cfg(), params)
    assert report.neighborhood.outlier_rate in (0.0, None)


def test_upper_bound_needs_labels(small_synth):
    """The oracle variant needs labels on every item."""
    unlabeled = small_synth.query.map_items(
        lambda item: make_item(item.image_id, item.features, item.visibility_scores))
    with pytest.raises(MissingLabelError):
        run_variant(Variant.OAN_ORGNN_UB, unlabeled, small_synth.gallery, eval_cfg(),
                    untrained(small_synth, AggregationMode.ORGNN))


def test_variant_runs_are_deterministic(small_synth):
    """Thread count does not change a report."""
    params = untrained(small_synth, AggregationMode.GNN)
    first = run_variant(Variant.OAN_GNN, small_synth.query, small_synth.gallery, eval_cfg(threads=3), params)
    second = run_variant(Variant.OAN_GNN, small_synth.query, small_synth.gallery, eval_cfg(), params)
    assert first.per_query_ap == second.per_query_ap
    assert first.fallback_count == second.fallback_count


def test_ablation_reports_written(small_synth, tmp_path):
    """The ablation writes JSON, CSV and schema files."""
    params = {mode: untrained(small_synth, mode) for mode in (AggregationMode.ORGNN, AggregationMode.GNN)}
    reports = run_ablation(small_synth.query, small_synth.gallery, eval_cfg(), params)
    assert [r.variant for r in reports] == [v.value for v in ABLATION_ORDER]
    write_reports(reports, tmp_path)
    frame = read_reports_csv(tmp_path / "report.csv")
    assert list(frame.columns) == CSV_COLUMNS
    assert frame["variant"].tolist() == [v.value for v in ABLATION_ORDER]
    loaded = read_report_json(tmp_path / "report_oan_orgnn_ub.json")
    assert loaded.mAP == pytest.approx(reports[-1].mAP)
    assert "properties" in json.loads((tmp_path / "report.schema.json").read_text())


def test_reconstructed_dataset(small_synth):
    """Reconstructed queries keep ids and become fully visible."""
    rebuilt, rep = reconstruct_dataset(Variant.OAN_AVGAGG, small_synth.query, small_synth.gallery, eval_cfg())
    assert isinstance(rebuilt, Dataset)
    assert rebuilt.image_ids == small_synth.query.image_ids
    for item, ns in zip(rebuilt, rep.neighborhoods):
        if ns is not None and not ns.fallback:
            assert item.visibility_mask.all()
            assert np.allclose(np.linalg.norm(item.features, axis=1), 1.0, atol=1e-5)
    with pytest.raises(ValueError):
        reconstruct_dataset(Variant.BASELINE, small_synth.query, small_synth.gallery, eval_cfg())
