"""
Test suite for the gallery index and neighborhood construction.
"""

import numpy as np
import pytest

from src.core.exceptions import EmptyGalleryError, FullyOccludedQueryError, MissingLabelError
from src.core.types import Dataset
from src.neighborhood.index import batch_neighborhoods, build_index, image_neighborhood, oracle_filter, \
    part_neighbors

from .conftest import make_item, random_items


def brute_force_neighborhood(gallery, query, k, theta, exclude_self=True):
    """Reference: explicit per-part scan, sort, cut and set intersection"""
    lists = []
    for p in query.visible_parts:
        q = query.features[p].astype(np.float64)
        q = q / np.linalg.norm(q)
        scored = []
        for item in gallery:
            if not item.visibility_mask[p] or (exclude_self and item.image_id == query.image_id):
                continue
            g = item.features[p].astype(np.float64)
            sim = float(g @ q / np.linalg.norm(g))
            if sim >= theta:
                scored.append((-sim, item.image_id))
        lists.append({image_id for _, image_id in sorted(scored)[:k]})
    return set.intersection(*lists)


def test_empty_gallery_rejected():
    """An empty gallery cannot be indexed."""
    with pytest.raises(EmptyGalleryError):
        build_index(Dataset.from_items([], num_parts=2, feature_dim=3))


def test_part_neighbors_threshold_and_ties():
    """Per-part search applies K, the threshold and id tie-breaks."""
    gallery = Dataset.from_items([
        make_item("b", [[1.0, 0.0]]),
        make_item("a", [[2.0, 0.0]]),
        make_item("c", [[1.0, 1.0]]),
        make_item("d", [[0.0, 1.0]]),
    ])
    index = build_index(gallery)
    # a and b tie at 1.0 and come back in ascending id order
    assert part_neighbors(index, 0, np.array([1.0, 0.0]), k=10, theta=0.7) == ["a", "b", "c"]
    assert part_neighbors(index, 0, np.array([1.0, 0.0]), k=2, theta=0.7) == ["a", "b"]
    assert part_neighbors(index, 0, np.array([1.0, 0.0]), k=10, theta=0.71) == ["a", "b"]
    with pytest.raises(ValueError):
        part_neighbors(index, 0, np.array([1.0, 0.0]), k=0, theta=0.7)


def test_occluded_gallery_parts_are_not_indexed():
    """Occluded gallery parts stay out of their part index."""
    gallery = Dataset.from_items([
        make_item("a", [[1.0, 0.0], [1.0, 0.0]], [1.0, 0.1]),
        make_item("b", [[1.0, 0.0], [1.0, 0.0]], [1.0, 1.0]),
    ])
    assert build_index(gallery).parts[1].image_ids == ("b",)
    assert build_index(gallery, use_visibility=False).parts[1].image_ids == ("a", "b")


def test_neighborhood_matches_brute_force():
    """Neighborhoods equal a brute-force scan on 100 random cases."""
    rng = np.random.default_rng(7)
    for case in range(100):
        gallery = Dataset.from_items(random_items(rng, 40, parts=3, dim=4))
        query = random_items(rng, 1, parts=3, dim=4, prefix="q")[0]
        k = int(rng.integers(1, 15))
        theta = float(rng.uniform(-0.2, 0.6))
        ns = image_neighborhood(build_index(gallery), query, k, theta)
        assert set(ns.members) == brute_force_neighborhood(gallery, query, k, theta), f"case {case}"
        assert ns.fallback == (len(ns) == 0)
        assert list(ns.member_scores) == sorted(ns.member_scores, reverse=True)


def test_members_ordered_by_lowest_part_similarity():
    """Members sort by their weakest part similarity."""
    gallery = Dataset.from_items([
        make_item("x", [[1.0, 0.0], [0.6, 0.8]]),
        make_item("y", [[0.8, 0.6], [1.0, 0.0]]),
    ])
    ns = image_neighborhood(build_index(gallery), make_item("q", [[1.0, 0.0], [1.0, 0.0]]), 5, 0.5)
    assert ns.members == ("y", "x")
    assert ns.member_scores == pytest.approx((0.8, 0.6))


def test_fully_occluded_query_rejected():
    """A query with no visible part raises."""
    gallery = Dataset.from_items(random_items(np.random.default_rng(0), 5, parts=2, dim=3))
    with pytest.raises(FullyOccludedQueryError):
        image_neighborhood(build_index(gallery), make_item("q", np.ones((2, 3)), [0.1, 0.2]), 3, 0.0)


def test_ignoring_visibility_uses_every_part():
    """Without visibility every part is indexed and searched."""
    gallery = Dataset.from_items([make_item("a", [[1.0, 0.0], [0.0, 1.0]], [0.1, 0.1])])
    query = make_item("q", [[1.0, 0.0], [0.0, 1.0]], [0.1, 0.1])
    ns = image_neighborhood(build_index(gallery, use_visibility=False), query, 3, 0.5)
    assert ns.members == ("a",)


def test_self_is_excluded():
    """A gallery image is never its own neighbor."""
    items = random_items(np.random.default_rng(1), 10, parts=2, dim=3, visible_rate=1.0)
    index = build_index(Dataset.from_items(items))
    ns = image_neighborhood(index, items[0], k=10, theta=-1.0)
    assert items[0].image_id not in ns.members
    assert len(ns) == 9
    kept = image_neighborhood(index, items[0], k=10, theta=-1.0, exclude_self=False)
    assert kept.members[0] == items[0].image_id


def test_batch_matches_single_queries():
    """Batched search agrees with one-at-a-time search."""
    rng = np.random.default_rng(3)
    gallery = Dataset.from_items(random_items(rng, 60, parts=3, dim=5))
    queries = random_items(rng, 30, parts=3, dim=5, prefix="q") + list(gallery.items[:5])
    index = build_index(gallery)
    batch = batch_neighborhoods(index, queries, k=8, theta=0.1, threads=3)
    for query, ns in zip(queries, batch):
        single = image_neighborhood(index, query, 8, 0.1)
        assert ns.target_id == query.image_id
        assert ns.members == single.members


@pytest.mark.parametrize("param", ["k", "theta"])
def test_neighborhood_is_monotone(param):
    """Raising K never drops members and raising theta never adds any."""
    rng = np.random.default_rng(11)
    for _ in range(200):
        gallery = Dataset.from_items(random_items(rng, 25, parts=3, dim=4))
        query = random_items(rng, 1, parts=3, dim=4, prefix="q")[0]
        index = build_index(gallery)
        k, theta = int(rng.integers(1, 10)), float(rng.uniform(-0.3, 0.5))
        base = set(image_neighborhood(index, query, k, theta).members)
        if param == "k":
            larger = set(image_neighborhood(index, query, k + 3, theta).members)
            assert base <= larger
        else:
            stricter = set(image_neighborhood(index, query, k, theta + 0.2).members)
            assert stricter <= base


def test_oracle_filter_keeps_same_identity():
    """The oracle filter keeps only same-identity members."""
    gallery = Dataset.from_items([
        make_item("a", [[1.0, 0.0]], person_id=1),
        make_item("b", [[0.9, 0.1]], person_id=2),
        make_item("c", [[0.8, 0.2]], person_id=1),
    ])
    ns = image_neighborhood(build_index(gallery), make_item("q", [[1.0, 0.0]], person_id=1), 5, 0.5)
    labels = {"q": 1, "a": 1, "b": 2, "c": 1}
    filtered = oracle_filter(ns, labels)
    assert filtered.members == ("a", "c")
    assert not filtered.fallback
    assert oracle_filter(ns, {**labels, "q": 3}).fallback
    with pytest.raises(MissingLabelError):
        oracle_filter(ns, {"a": 1})


def test_fully_visible_query_searches_the_configured_parts():
    """A holistic query matches on the upper parts only; an occluded one keeps its visible parts."""
    gallery = Dataset.from_items([
        make_item("same_top", [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        make_item("all_match", [[1.0, 0.1], [1.0, 0.1], [1.0, 0.1]]),
    ])
    index = build_index(gallery)
    holistic = make_item("q", [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    assert image_neighborhood(index, holistic, 5, 0.9).members == ("all_match",)
    upper = image_neighborhood(index, holistic, 5, 0.9, holistic_parts=(0, 1))
    assert set(upper.members) == {"same_top", "all_match"}
    assert set(upper.part_candidates) == {0, 1}
    occluded = make_item("q", [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], [1.0, 0.1, 1.0])
    assert image_neighborhood(index, occluded, 5, 0.9, holistic_parts=(0, 1)).members == ("all_match",)
    # Indices past M are dropped; nothing left means every part is searched
    assert image_neighborhood(index, holistic, 5, 0.9, holistic_parts=(7,)).members == ("all_match",)


def test_batch_neighborhoods_apply_the_holistic_subset():
    """Batched search agrees with the one-at-a-time search under a holistic subset."""
    rng = np.random.default_rng(17)
    gallery = Dataset.from_items(random_items(rng, 40, parts=4, dim=4))
    queries = random_items(rng, 30, parts=4, dim=4, visible_rate=0.8, prefix="q")
    index = build_index(gallery)
    batched = batch_neighborhoods(index, queries, 8, 0.1, holistic_parts=(0, 1))
    assert any(len(q.visible_parts) == 4 for q in queries)
    for query, ns in zip(queries, batched):
        single = image_neighborhood(index, query, 8, 0.1, holistic_parts=(0, 1))
        assert ns.members == single.members
        if len(query.visible_parts) == 4:
            assert set(ns.part_candidates) == {0, 1}
