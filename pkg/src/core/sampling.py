"""Identity-balanced batch sampling (P persons x Q samples per batch)."""

from collections import defaultdict
from typing import Dict, List, Sequence

import numpy as np


def group_by_label(labels: Sequence[int]) -> Dict[int, List[int]]:
    groups: Dict[int, List[int]] = defaultdict(list)
    for index, label in enumerate(labels):
        groups[int(label)].append(index)
    return dict(groups)


def identity_batches(labels: Sequence[int], persons_per_batch: int, per_person: int,
                     rng: np.random.Generator, min_per_person: int = 1) -> List[np.ndarray]:
    """
    One epoch of batches, each holding `persons_per_batch` identities with
    `per_person` samples each (drawn with replacement only when an identity has
    fewer samples than that).

    Args:
        labels: Label of every sample
        persons_per_batch: P
        per_person: Q
        rng: Seeded generator; the same seed gives the same epoch
        min_per_person: Identities with fewer samples are left out

    Returns:
        List[np.ndarray]: Sample indices per batch (the last short batch is kept
        when it still holds at least two identities)
    """
    groups = group_by_label(labels)
    eligible = sorted(label for label, members in groups.items() if len(members) >= min_per_person)
    order = rng.permutation(len(eligible))
    batches = []
    for start in range(0, len(order), persons_per_batch):
        chosen = [eligible[i] for i in order[start:start + persons_per_batch]]
        if len(chosen) < 2 and batches:
            break
        indices = []
        for label in chosen:
            members = groups[label]
            replace = len(members) < per_person
            picked = rng.choice(len(members), size=per_person, replace=replace)
            indices.extend(members[i] for i in picked)
        batches.append(np.asarray(indices, dtype=np.int64))
    return batches
