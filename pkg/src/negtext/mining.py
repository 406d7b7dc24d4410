"""Online mining over the historical test cache.

Negative images are cached test images whose negative-label score falls
below the detector threshold; of those, the lowest-scoring fraction is
kept, which amounts to an implicit data-dependent threshold (the max
score inside the selection). A second miner counts which ID classes the
cached images get classified into and keeps the most frequent slice.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingMatrix, LabelSpace, TestBatch
from .errors import ConfigError, DimError, InputError


@dataclass(frozen=True)
class MiningConfig:
    initial_threshold: float = 0.9
    selection_ratio: float = 0.5
    class_ratio: float = 0.08
    cache_capacity: int = 20000

    def __post_init__(self):
        if not 0.0 < self.initial_threshold < 1.0:
            raise ConfigError("initial threshold must lie in (0, 1)")
        if not 0.0 < self.selection_ratio < 1.0:
            raise ConfigError("selection ratio must lie in (0, 1)")
        if not 0.0 < self.class_ratio <= 1.0:
            raise ConfigError("class ratio must lie in (0, 1]")
        if self.cache_capacity < 1:
            raise ConfigError("cache capacity must be >= 1")


@dataclass(frozen=True)
class MinedNegatives:
    image_ids: tuple[str, ...]
    indices: tuple[int, ...]  # positions in the cache at mining time
    gamma_star: float | None

    @property
    def empty(self) -> bool:
        return len(self.image_ids) == 0


@dataclass(frozen=True)
class SimilarClassSubset:
    class_indices: tuple[int, ...]
    frequencies: np.ndarray  # per-ID-class, sums to 1


def mine_negative_images(
    cache_ids, nl_scores, cfg: MiningConfig
) -> MinedNegatives:
    """Select the lowest-scoring fraction of below-threshold cache images."""
    cache_ids = list(cache_ids)
    nl_scores = np.asarray(nl_scores, dtype=np.float64)
    if len(cache_ids) == 0:
        raise InputError("cache is empty")
    if nl_scores.shape[0] != len(cache_ids):
        raise InputError("one score per cached image required")
    candidates = np.flatnonzero(nl_scores < cfg.initial_threshold)
    if candidates.size == 0:
        return MinedNegatives(image_ids=(), indices=(), gamma_star=None)
    k = max(1, int(np.floor(cfg.selection_ratio * candidates.size)))
    # stable sort keeps first-appearance order among tied scores
    order = np.argsort(nl_scores[candidates], kind="stable")
    chosen = candidates[order[:k]]
    gamma_star = float(np.max(nl_scores[chosen]))
    return MinedNegatives(
        image_ids=tuple(cache_ids[i] for i in chosen),
        indices=tuple(int(i) for i in chosen),
        gamma_star=gamma_star,
    )


def classify_id(v: np.ndarray, ids: LabelSpace) -> int:
    """Nearest ID text feature by cosine; ties go to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != ids.features.dim:
        raise DimError(f"dim {v.shape[0]} vs label dim {ids.features.dim}")
    return int(np.argmax(ids.features.data @ v))


def classify_batch(images: np.ndarray, ids: LabelSpace) -> np.ndarray:
    if images.shape[1] != ids.features.dim:
        raise DimError(
            f"image dim {images.shape[1]} vs label dim {ids.features.dim}"
        )
    return np.argmax(images @ ids.features.data.T, axis=1)


def mine_similar_classes(
    predictions, ids: LabelSpace, cfg: MiningConfig
) -> SimilarClassSubset:
    """Most frequently predicted ID classes over the cached images."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.size == 0:
        raise InputError("cache is empty")
    counts = np.bincount(predictions, minlength=ids.n_classes)
    freqs = counts / predictions.size
    k = max(1, int(np.floor(cfg.class_ratio * ids.n_classes)))
    order = np.argsort(-freqs, kind="stable")  # ties -> lowest class index
    return SimilarClassSubset(
        class_indices=tuple(int(i) for i in order[:k]),
        frequencies=freqs,
    )


class HistoryCache:
    """Bounded cache of historical test images with reservoir replacement.

    Every streamed image has equal retention probability once the capacity
    is exceeded; replacement draws come from a dedicated generator so that
    truncating a stream replays identically.
    """

    def __init__(self, capacity: int, dim: int, seed: int):
        if capacity < 1:
            raise ConfigError("cache capacity must be >= 1")
        self.capacity = capacity
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self.n_seen = 0
        self._rng = np.random.default_rng(
            np.random.SeedSequence([seed, 0xCAC4E])
        )

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def matrix(self) -> np.ndarray:
        if not self._rows:
            return np.empty((0, 0))
        return np.vstack(self._rows)

    def append_batch(self, batch: TestBatch) -> None:
        data = batch.images.data
        for i, image_id in enumerate(batch.images.ids):
            self.n_seen += 1
            if len(self._ids) < self.capacity:
                self._ids.append(image_id)
                self._rows.append(np.array(data[i]))
            else:
                j = int(self._rng.integers(0, self.n_seen))
                if j < self.capacity:
                    self._ids[j] = image_id
                    self._rows[j] = np.array(data[i])

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "ids": list(self._ids),
            "n_seen": self.n_seen,
            "rng_state": self._rng.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: dict, data: np.ndarray, seed: int) -> "HistoryCache":
        cache = cls(state["capacity"], data.shape[1] if data.size else 0, seed)
        cache._ids = list(state["ids"])
        cache._rows = [np.array(row) for row in data]
        cache.n_seen = state["n_seen"]
        cache._rng.bit_generator.state = state["rng_state"]
        return cache
