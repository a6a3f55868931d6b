"""
Blueprint: Synth - Dataset Generator

Seed-deterministic occluded-retrieval benchmark standing in for real
surveillance datasets, plus body-mask fixtures for the occlusion estimator.

Components:
1. SynthSpec / MaskSpec (validated generation settings)
2. generate: identities, cameras, shared obstacle clusters, splits, raw vectors
3. similarity_stats: intra- vs inter-identity cosine of visible parts
4. generate_masks: silhouettes with horizontal occluders and known visibility
5. write_synth / write_mask_fixtures
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.exceptions import SynthSpecError
from ..core.features import normalize_rows
from ..core.types import VISIBILITY_THRESHOLD, Dataset, PartFeatureSet
from ..data_handlers.feature_io import atomic_write_bytes, write_feature_file
from ..data_handlers.mask_io import write_mask
from ..occlusion.visibility import BodyMask, PartLayout
from ..utils.logger import setup_logger

logger = setup_logger(__name__)


class SynthSpec(BaseModel):
    """Synthetic benchmark settings; defaults are the desk-scale benchmark"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_identities: int = Field(200, ge=2)
    images_per_identity: int = Field(20, ge=2)
    D_raw: int = Field(64, ge=1, description="Raw vector dimension (encoder input)")
    D: int = Field(32, ge=1)
    M: int = Field(6, ge=1)
    occlusion_rate: float = Field(0.5, ge=0.0, lt=1.0, description="Probability that an image is occluded")
    intra_identity_noise: float = Field(0.08, ge=0.0, description="Per-coordinate sigma around the prototype")
    num_obstacle_clusters: int = Field(5, ge=1)
    obstacle_noise: float = Field(0.05, ge=0.0)
    camera_count: int = Field(4, ge=1)
    camera_noise: float = Field(0.03, ge=0.0, description="Sigma of the per-camera part offset")
    lookalike_group_size: int = Field(4, ge=1, description="Identities sharing a common appearance base")
    lookalike_weight: float = Field(0.8, ge=0.0, lt=1.0, description="Weight of the shared base on a shared part")
    lookalike_parts: Optional[int] = Field(
        3, ge=1, description="Parts a look-alike group shares (None: all); the rest tell its members apart")
    queries_per_identity: int = Field(3, ge=1)
    train_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    raw_noise: float = Field(0.05, ge=0.0)
    visibility_flip_rate: float = Field(0.0, ge=0.0, le=1.0, description="Chance a recorded visibility is wrong")
    seed: int = Field(0, ge=0)


@dataclass(frozen=True)
class SimilarityStats:
    intra_identity: float
    inter_identity: float
    intra_pairs: int
    inter_pairs: int

    @property
    def margin(self) -> float:
        return self.intra_identity - self.inter_identity

    def as_dict(self) -> Dict[str, float]:
        return {"intra_identity": self.intra_identity, "inter_identity": self.inter_identity,
                "margin": self.margin, "intra_pairs": self.intra_pairs, "inter_pairs": self.inter_pairs}


@dataclass(eq=False)
class SynthData:
    train: Dataset
    query: Dataset
    gallery: Dataset
    raw: Dict[str, Dataset]
    truth: Dict[str, Dict[str, Any]]
    spec: SynthSpec
    stats: Optional[SimilarityStats] = None

    @property
    def splits(self) -> Dict[str, Dataset]:
        return {"train": self.train, "query": self.query, "gallery": self.gallery}

    def labels(self) -> Dict[str, int]:
        return {image_id: entry["person_id"] for image_id, entry in self.truth.items()}


def _non_negative_unit(rows: np.ndarray) -> np.ndarray:
    # Descriptors behave like pooled post-ReLU activations
    return normalize_rows(np.maximum(rows, 0.0))


def _prototypes(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """
    num_identities x M x D unit prototypes

    Identities in a look-alike group share a base on lookalike_parts randomly
    chosen parts (all parts when unset) and have their own appearance elsewhere.
    """
    groups = -(-spec.num_identities // spec.lookalike_group_size)
    bases = rng.normal(size=(groups, spec.M, spec.D))
    own = rng.normal(size=(spec.num_identities, spec.M, spec.D))
    shared_count = spec.M if spec.lookalike_parts is None else min(spec.lookalike_parts, spec.M)
    shared = np.zeros((groups, spec.M), dtype=bool)
    for group in range(groups):
        shared[group, rng.choice(spec.M, size=shared_count, replace=False)] = True
    group_of = np.arange(spec.num_identities) // spec.lookalike_group_size
    mixed = spec.lookalike_weight * bases[group_of] + (1.0 - spec.lookalike_weight) * own
    return _non_negative_unit(np.where(shared[group_of][:, :, None], mixed, own))


def _occluded_parts(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean occlusion pattern with at least one occluded and one visible part"""
    while True:
        pattern = rng.random(spec.M) < 0.5
        if pattern.any() and not pattern.all():
            return pattern


def _visibility_scores(occluded: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    recorded = occluded.copy()
    if spec.visibility_flip_rate > 0:
        recorded ^= rng.random(occluded.size) < spec.visibility_flip_rate
        if recorded.all():
            recorded = occluded.copy()
    visible_scores = rng.uniform(0.7, 1.0, size=occluded.size)
    occluded_scores = rng.uniform(0.0, 0.3, size=occluded.size)
    return np.where(recorded, occluded_scores, visible_scores)


def _split_identities(spec: SynthSpec, rng: np.random.Generator) -> Tuple[List[int], List[int]]:
    order = rng.permutation(spec.num_identities)
    n_train = min(max(int(round(spec.num_identities * spec.train_fraction)), 1), spec.num_identities - 1)
    return sorted(int(i) for i in order[:n_train]), sorted(int(i) for i in order[n_train:])


def generate(spec: SynthSpec) -> SynthData:
    """
    Build train / query / gallery part-feature datasets with ground truth

    Args:
        spec: Generation settings (fully determines the output)

    Returns:
        SynthData: The three splits, raw D_raw vectors for the encoder, per-image
        ground truth and the similarity statistics of the generated data
    """
    try:
        if spec.M < 2 and spec.occlusion_rate > 0:
            raise SynthSpecError("occluded images need M >= 2 (one occluded and one visible part)")
        rng = np.random.default_rng(spec.seed)
        prototypes = _prototypes(spec, rng)
        camera_offsets = rng.normal(0.0, spec.camera_noise, size=(spec.camera_count, spec.M, spec.D))
        obstacles = _non_negative_unit(rng.normal(size=(spec.num_obstacle_clusters, spec.M, spec.D)))
        mixing = rng.normal(0.0, 1.0 / np.sqrt(spec.D), size=(spec.M, spec.D_raw, spec.D))
        train_ids, test_ids = _split_identities(spec, rng)
        train_set = set(train_ids)

        items: Dict[str, List[PartFeatureSet]] = {"train": [], "query": [], "gallery": []}
        raw_items: Dict[str, List[PartFeatureSet]] = {"train": [], "query": [], "gallery": []}
        truth: Dict[str, Dict[str, Any]] = {}

        for pid in range(spec.num_identities):
            per_image = []
            for idx in range(spec.images_per_identity):
                camera = int(rng.integers(spec.camera_count))
                image_id = f"{pid:04d}_c{camera}_{idx:03d}"
                features = prototypes[pid] + rng.normal(0.0, spec.intra_identity_noise, size=(spec.M, spec.D)) \
                    + camera_offsets[camera]
                occluded = np.zeros(spec.M, dtype=bool)
                cluster = None
                if rng.random() < spec.occlusion_rate:
                    occluded = _occluded_parts(spec, rng)
                    cluster = int(rng.integers(spec.num_obstacle_clusters))
                    clutter = obstacles[cluster] + rng.normal(0.0, spec.obstacle_noise, size=(spec.M, spec.D))
                    features = np.where(occluded[:, None], clutter, features)
                features = _non_negative_unit(features)
                scores = _visibility_scores(occluded, spec, rng)
                raw = np.einsum("prd,pd->pr", mixing, features) + rng.normal(0.0, spec.raw_noise, size=(spec.M, spec.D_raw))
                per_image.append((image_id, camera, features, raw, scores, occluded, cluster))

            if pid in train_set:
                assignment = ["train"] * len(per_image)
            else:
                occluded_idx = [i for i, entry in enumerate(per_image) if entry[5].any()]
                queries = set(occluded_idx[:spec.queries_per_identity])
                if len(queries) == len(per_image):
                    raise SynthSpecError(f"identity {pid} has no gallery images; raise images_per_identity")
                assignment = ["query" if i in queries else "gallery" for i in range(len(per_image))]

            for split, (image_id, camera, features, raw, scores, occluded, cluster) in zip(assignment, per_image):
                common = dict(image_id=image_id, visibility_scores=scores, person_id=pid, camera_id=camera)
                items[split].append(PartFeatureSet(features=features, **common))
                raw_items[split].append(PartFeatureSet(features=raw, **common))
                truth[image_id] = {
                    "person_id": pid,
                    "camera_id": camera,
                    "split": split,
                    "visible": [bool(v) for v in ~occluded],
                    "obstacle_cluster": cluster,
                }

        datasets = {split: Dataset(tuple(rows), split=split, num_parts=spec.M, feature_dim=spec.D)
                    for split, rows in items.items()}
        raw = {split: Dataset(tuple(rows), split=split, num_parts=spec.M, feature_dim=spec.D_raw)
               for split, rows in raw_items.items()}
        data = SynthData(datasets["train"], datasets["query"], datasets["gallery"], raw, truth, spec)
        data.stats = similarity_stats([data.train, data.gallery], seed=spec.seed)
        logger.info(
            f"Generated {len(data.train)} train / {len(data.query)} query / {len(data.gallery)} gallery images; "
            f"visible-part cosine intra={data.stats.intra_identity:.3f} inter={data.stats.inter_identity:.3f}"
        )
        return data

    except Exception as e:
        logger.error(f"Synthetic generation failed: {str(e)}")
        raise


def similarity_stats(datasets: Sequence[Dataset], max_items: int = 1000, seed: int = 0) -> SimilarityStats:
    """
    Mean cosine between visible parts of same-identity and of different-identity pairs

    Args:
        datasets: Labeled datasets pooled together
        max_items: Larger pools are subsampled (seeded) to keep the pair count bounded
        seed: Subsampling seed

    Returns:
        SimilarityStats: Means over all qualifying pairs and parts
    """
    items = [item for ds in datasets for item in ds if item.person_id is not None]
    if len(items) > max_items:
        picked = np.sort(np.random.default_rng(seed).choice(len(items), size=max_items, replace=False))
        items = [items[i] for i in picked]
    if len(items) < 2:
        return SimilarityStats(0.0, 0.0, 0, 0)
    labels = np.array([item.person_id for item in items])
    masks = np.stack([item.visibility_mask for item in items])
    feats = np.stack([item.features for item in items]).astype(np.float64)
    same = labels[:, None] == labels[None, :]
    upper = np.triu(np.ones_like(same), k=1)
    sums = {True: 0.0, False: 0.0}
    counts = {True: 0, False: 0}
    for p in range(feats.shape[1]):
        unit = normalize_rows(feats[:, p, :])
        both = np.outer(masks[:, p], masks[:, p]) & upper
        sims = unit @ unit.T
        for flag in (True, False):
            chosen = both & (same if flag else ~same)
            sums[flag] += float(sims[chosen].sum())
            counts[flag] += int(chosen.sum())
    mean = {flag: sums[flag] / counts[flag] if counts[flag] else 0.0 for flag in (True, False)}
    return SimilarityStats(mean[True], mean[False], counts[True], counts[False])


def write_synth(data: SynthData, out_dir: Path) -> List[Path]:
    """Feature files per split, raw vectors under raw/, and truth.json"""
    out_dir = Path(out_dir)
    written = []
    for split, dataset in data.splits.items():
        written.append(write_feature_file(dataset, out_dir / f"{split}.bin"))
    for split, dataset in data.raw.items():
        written.append(write_feature_file(dataset, out_dir / "raw" / f"{split}.bin"))
    doc = {
        "spec": data.spec.model_dump(),
        "similarity": data.stats.as_dict() if data.stats else None,
        "images": data.truth,
    }
    truth_path = out_dir / "truth.json"
    atomic_write_bytes(truth_path, json.dumps(doc, indent=2, sort_keys=True).encode("utf-8"))
    written.append(truth_path)
    return written


def load_truth_labels(path: Path) -> Dict[str, int]:
    doc = json.loads(Path(path).read_text())
    return {image_id: int(entry["person_id"]) for image_id, entry in doc["images"].items()}


# Body-mask fixtures

class MaskSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    count: int = Field(500, ge=1)
    height: int = Field(128, ge=16)
    width: int = Field(64, ge=8)
    noise: float = Field(0.01, ge=0.0, le=0.2, description="Salt-and-pepper pixel flip rate")
    seed: int = Field(0, ge=0)


@dataclass(eq=False)
class MaskFixture:
    name: str
    mask: BodyMask
    truth: np.ndarray
    occluder: str = "none"
    boundary: Optional[int] = None
    visible_fraction: np.ndarray = field(default=None)


# Parts whose visible fraction is this close to 0.5 make ambiguous fixtures
_AMBIGUITY_MARGIN = 0.1


def render_silhouette(height: int, width: int) -> np.ndarray:
    """Upright rectangular body: small top/bottom margin, 1/8 of the width on each side"""
    bitmap = np.zeros((height, width), dtype=bool)
    margin_rows, margin_cols = max(height // 32, 1), max(width // 8, 1)
    bitmap[margin_rows:height - margin_rows, margin_cols:width - margin_cols] = True
    return bitmap


def apply_occluder(bitmap: np.ndarray, occluder: str, boundary: Optional[int]) -> np.ndarray:
    """'bottom' erases rows >= boundary, 'top' erases rows < boundary, 'none' leaves the body whole"""
    out = bitmap.copy()
    if occluder == "bottom":
        out[boundary:, :] = False
    elif occluder == "top":
        out[:boundary, :] = False
    elif occluder != "none":
        raise ValueError(f"unknown occluder '{occluder}'")
    return out


def visible_fractions(clean: np.ndarray, occluded: np.ndarray, layout: PartLayout) -> np.ndarray:
    """Share of each part's body pixels left uncovered"""
    fractions = np.empty(layout.num_parts)
    for p, (r0, r1, c0, c1) in enumerate(layout.regions):
        body = clean[r0:r1, c0:c1].sum()
        fractions[p] = occluded[r0:r1, c0:c1].sum() / body if body else 0.0
    return fractions


def make_fixture(name: str, height: int, width: int, occluder: str = "none",
                 boundary: Optional[int] = None) -> MaskFixture:
    layout = PartLayout(height, width)
    clean = render_silhouette(height, width)
    covered = apply_occluder(clean, occluder, boundary)
    fractions = visible_fractions(clean, covered, layout)
    return MaskFixture(name, BodyMask(covered), fractions >= VISIBILITY_THRESHOLD, occluder, boundary, fractions)


def generate_masks(spec: MaskSpec) -> List[MaskFixture]:
    """
    Body-mask fixtures with known per-part visibility

    Occluder boundaries are redrawn until no part sits within a small margin
    of half visible, so ground truth is geometrically unambiguous.
    """
    rng = np.random.default_rng(spec.seed)
    fixtures = []
    for index in range(spec.count):
        name = f"mask_{index:04d}"
        occluder = str(rng.choice(["none", "bottom", "top"], p=[0.2, 0.5, 0.3]))
        if occluder == "none":
            fixture = make_fixture(name, spec.height, spec.width)
        else:
            while True:
                low, high = (0.3, 0.95) if occluder == "bottom" else (0.05, 0.6)
                boundary = int(rng.integers(int(spec.height * low), int(spec.height * high)))
                fixture = make_fixture(name, spec.height, spec.width, occluder, boundary)
                if np.all(np.abs(fixture.visible_fraction - 0.5) > _AMBIGUITY_MARGIN):
                    break
        if spec.noise > 0:
            flips = rng.random((spec.height, spec.width)) < spec.noise
            fixture.mask = BodyMask(fixture.mask.bitmap ^ flips)
        fixtures.append(fixture)
    logger.debug(f"Generated {len(fixtures)} mask fixtures")
    return fixtures


def write_mask_fixtures(fixtures: Sequence[MaskFixture], out_dir: Path) -> List[Path]:
    """One PGM per fixture plus masks_truth.json (name -> per-part visibility)"""
    out_dir = Path(out_dir)
    written = []
    for fixture in fixtures:
        path = out_dir / f"{fixture.name}.pgm"
        write_mask(fixture.mask, path)
        written.append(path)
    truth = {f.name: {"visible": [bool(v) for v in f.truth], "occluder": f.occluder, "boundary": f.boundary}
             for f in fixtures}
    truth_path = out_dir / "masks_truth.json"
    atomic_write_bytes(truth_path, json.dumps(truth, indent=2, sort_keys=True).encode("utf-8"))
    written.append(truth_path)
    return written
