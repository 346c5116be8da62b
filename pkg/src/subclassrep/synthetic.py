"""Seeded synthetic corpora in which each top-level class is a mixture of clusters.

Class ``k`` owns the feature plane spanned by dimensions ``2k`` and ``2k + 1``;
its clusters sit evenly spaced on a circle of radius ``radius`` in that plane.
Every class's convex hull therefore contains the origin, so no hyperplane
separates two classes, while each cluster is linearly separable from all the
others. Each cluster is marked by its own tag.
"""

from __future__ import annotations

import numpy as np

from subclassrep.dataset import ImageRecord

GENERIC_TAGS = ("photo", "canon", "holiday", "2012", "color")


def subclass_tag(class_index: int, cluster: int) -> str:
    return f"class{class_index}-sub{cluster}"


def class_name(class_index: int) -> str:
    return f"class{class_index}"


def make_subclass_mixture(
    n_classes: int = 3,
    clusters_per_class: int = 3,
    n_train: int = 600,
    n_test: int = 300,
    dim: int = 10,
    tag_noise: float = 0.1,
    radius: float = 3.0,
    spread: float = 0.5,
    seed: int = 0,
) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Return (train, test) records, balanced over classes and clusters.

    With probability ``tag_noise`` a record's cluster tag is replaced by the
    tag of a different, uniformly chosen cluster. Every record also carries its
    class name as a tag plus one or two generic tags shared by all classes.
    """
    if dim < 2 * n_classes:
        raise ValueError(f"dim must be at least {2 * n_classes} for {n_classes} classes")
    if clusters_per_class < 3:
        raise ValueError("at least 3 clusters per class are needed to surround the origin")
    rng = np.random.default_rng(seed)
    n_clusters = n_classes * clusters_per_class
    owner = np.arange(n_clusters) // clusters_per_class
    local = np.arange(n_clusters) % clusters_per_class
    angles = 2 * np.pi * local / clusters_per_class
    centres = np.zeros((n_clusters, dim))
    centres[np.arange(n_clusters), 2 * owner] = radius * np.cos(angles)
    centres[np.arange(n_clusters), 2 * owner + 1] = radius * np.sin(angles)
    tags = [subclass_tag(owner[m], local[m]) for m in range(n_clusters)]

    def draw(n: int, prefix: str) -> list[ImageRecord]:
        cluster = np.arange(n) % n_clusters
        cluster = cluster[rng.permutation(n)]
        feats = centres[cluster] + spread * rng.standard_normal((n, dim))
        records = []
        for k in range(n):
            m = int(cluster[k])
            tag_cluster = m
            if rng.random() < tag_noise:
                others = [c for c in range(n_clusters) if c != m]
                tag_cluster = int(others[rng.integers(len(others))])
            generic = rng.choice(len(GENERIC_TAGS), size=int(rng.integers(1, 3)), replace=False)
            rec_tags = {tags[tag_cluster], class_name(int(owner[m]))} | {GENERIC_TAGS[g] for g in generic}
            records.append(ImageRecord(f"{prefix}{k:05d}", class_name(int(owner[m])), frozenset(rec_tags), feats[k]))
        return records

    return draw(n_train, "train-"), draw(n_test, "test-")
