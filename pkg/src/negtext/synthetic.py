"""Synthetic hypersphere world and oracle generation client.

Concepts (ID classes, near-OOD classes attached to parent ID classes,
far-OOD clusters) are unit prototypes; images and text features are
prototypes perturbed by angular (von-Mises-Fisher-like) noise, so
everything stays unit-norm by construction. The oracle client answers
description requests with a token tied to the image's generating concept
(coarsely, for near-OOD, where a description cannot beat the parent
class) and lookalike requests with the angularly nearest non-ID concepts,
inventing plausible twins when none are close enough.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .embeddings import EmbeddingMatrix, LabelSpace, TestBatch
from .errors import ConfigError
from .metrics import MetricReport, compute_report
from .pipeline import PipelineConfig, run_stream
from .scoring import ScoreConfig, ScoreRecord
from .mining import MiningConfig
from .spaces import CorpusCandidates


@dataclass(frozen=True)
class WorldConfig:
    dim: int = 64
    n_id_classes: int = 20
    id_spread: float = 0.35
    text_noise: float = 0.05
    # near-OOD classes, each attached to a parent ID class
    n_near_classes: int = 0
    near_offset: float = 0.45
    near_spread: float = 0.25
    # far-OOD clusters, each anchored at (but far from) an ID prototype
    n_far_clusters: int = 0
    far_angle: float = 1.15
    far_spread: float = 0.25
    # corpus composition
    corpus_random: int = 400
    corpus_near_words: int = 0
    corpus_far_words: int = 0
    corpus_confuser_words: int = 0  # false-negative words near ID prototypes
    corpus_word_noise: float = 0.65
    confuser_noise: float = 0.50
    # oracle behavior
    coarse_noise: float = 0.30
    expressive_noise: float = 0.08
    lookalike_angle: float = 0.45
    similar_threshold: float = 0.75
    describe_corruption: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2 or self.n_id_classes < 1:
            raise ConfigError("world needs dim >= 2 and at least one ID class")
        if self.n_far_clusters > 0 and self.far_angle <= self.near_offset:
            raise ConfigError(
                "far clusters must sit farther out than the near-OOD offset"
            )
        for name in ("id_spread", "near_spread", "far_spread", "text_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.describe_corruption <= 1.0:
            raise ConfigError("corruption probability must lie in [0, 1]")


def _hash_seed(*parts) -> np.random.SeedSequence:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:8], "little"))


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _tangent(rng: np.random.Generator, p: np.ndarray) -> np.ndarray:
    v = rng.standard_normal(p.shape[0])
    v -= np.dot(v, p) * p
    return v / np.linalg.norm(v)


def _rotate(p: np.ndarray, angle: float, rng: np.random.Generator) -> np.ndarray:
    if angle == 0.0:
        return np.array(p)
    t = _tangent(rng, p)
    return np.cos(angle) * p + np.sin(angle) * t


def _perturb(p: np.ndarray, spread: float, rng: np.random.Generator) -> np.ndarray:
    return _rotate(p, abs(rng.normal(0.0, spread)) if spread > 0 else 0.0, rng)


@dataclass(frozen=True)
class Concept:
    name: str
    proto: np.ndarray
    role: str  # "id" | "near" | "far"
    parent: int | None = None  # ID class index for near concepts


class SyntheticWorld:
    """Deterministic world: prototypes, label space, corpus, image stream."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg
        rng = np.random.default_rng(_hash_seed(cfg.seed, "world"))
        d = cfg.dim

        self.id_concepts: list[Concept] = []
        for i in range(cfg.n_id_classes):
            self.id_concepts.append(
                Concept(name=f"class_{i:02d}", proto=_unit(rng, d), role="id")
            )
        self.near_concepts: list[Concept] = []
        for j in range(cfg.n_near_classes):
            parent = j % cfg.n_id_classes
            proto = _rotate(self.id_concepts[parent].proto, cfg.near_offset, rng)
            self.near_concepts.append(
                Concept(name=f"near_{j:02d}", proto=proto, role="near", parent=parent)
            )
        self.far_concepts: list[Concept] = []
        for k in range(cfg.n_far_clusters):
            anchor = k % cfg.n_id_classes
            proto = _rotate(self.id_concepts[anchor].proto, cfg.far_angle, rng)
            min_angle = float(
                np.min(
                    np.arccos(
                        np.clip(
                            [np.dot(proto, c.proto) for c in self.id_concepts],
                            -1.0,
                            1.0,
                        )
                    )
                )
            )
            if min_angle <= cfg.near_offset:
                raise ConfigError(
                    "far cluster landed inside the near-OOD band; "
                    "widen far_angle or shrink near_offset"
                )
            self.far_concepts.append(
                Concept(name=f"far_{k:02d}", proto=proto, role="far")
            )
        self.ood_concepts = self.near_concepts + self.far_concepts
        self.concepts = {
            c.name: c for c in self.id_concepts + self.ood_concepts
        }

        label_rows = np.stack(
            [
                _perturb(c.proto, cfg.text_noise, rng)
                for c in self.id_concepts
            ]
        )
        self.label_space = LabelSpace(
            labels=tuple(c.name for c in self.id_concepts),
            features=EmbeddingMatrix.from_rows(
                [f"txt_{c.name}" for c in self.id_concepts], label_rows
            ),
        )

        words: list[str] = []
        vectors: list[np.ndarray] = []
        for i in range(cfg.corpus_random):
            words.append(f"word_{i:04d}")
            vectors.append(_unit(rng, d))
        for i in range(cfg.corpus_near_words):
            concept = self.near_concepts[i % max(1, len(self.near_concepts))]
            words.append(f"nearword_{i:04d}")
            vectors.append(_perturb(concept.proto, cfg.corpus_word_noise, rng))
        for i in range(cfg.corpus_far_words):
            concept = self.far_concepts[i % max(1, len(self.far_concepts))]
            words.append(f"farword_{i:04d}")
            vectors.append(_perturb(concept.proto, cfg.corpus_word_noise, rng))
        for i in range(cfg.corpus_confuser_words):
            concept = self.id_concepts[i % cfg.n_id_classes]
            words.append(f"confuser_{i:04d}")
            vectors.append(_perturb(concept.proto, cfg.confuser_noise, rng))
        self.corpus = CorpusCandidates(
            words=tuple(words),
            features=EmbeddingMatrix.from_rows(
                [f"corpus_{i:04d}" for i in range(len(words))], np.stack(vectors)
            ),
        )

        self.image_concepts: dict[str, str] = {}
        self._image_counter = 0

    def _sample_image(
        self, concept: Concept, rng: np.random.Generator
    ) -> tuple[str, np.ndarray]:
        spread = {
            "id": self.cfg.id_spread,
            "near": self.cfg.near_spread,
            "far": self.cfg.far_spread,
        }[concept.role]
        image_id = f"img_{self._image_counter:06d}"
        self._image_counter += 1
        self.image_concepts[image_id] = concept.name
        return image_id, _perturb(concept.proto, spread, rng)

    def make_batches(
        self, n_batches: int, id_per_batch: int, ood_per_batch: int
    ) -> list[TestBatch]:
        if ood_per_batch > 0 and not self.ood_concepts:
            raise ConfigError("world has no OOD concepts to sample from")
        rng = np.random.default_rng(_hash_seed(self.cfg.seed, "stream"))
        batches = []
        for _ in range(n_batches):
            entries = []
            for _ in range(id_per_batch):
                concept = self.id_concepts[rng.integers(len(self.id_concepts))]
                image_id, vec = self._sample_image(concept, rng)
                entries.append((image_id, vec, "ID"))
            for _ in range(ood_per_batch):
                concept = self.ood_concepts[rng.integers(len(self.ood_concepts))]
                image_id, vec = self._sample_image(concept, rng)
                entries.append((image_id, vec, "OOD"))
            rng.shuffle(entries)
            batches.append(
                TestBatch(
                    images=EmbeddingMatrix.from_rows(
                        [e[0] for e in entries],
                        np.stack([e[1] for e in entries]),
                    ),
                    ground_truth=tuple(e[2] for e in entries),
                )
            )
        return batches

    def oracle_client(self) -> "OracleClient":
        return OracleClient(self)


class OracleClient:
    """Generation client that answers from the world's ground truth.

    Descriptions of far-OOD images embed tightly at their cluster; for
    near-OOD (and mis-mined ID) images the description is deliberately
    coarse and lands near the parent ID prototype, since a short phrase
    cannot separate a lookalike from its parent class. Deterministic for
    a fixed world seed regardless of call order.
    """

    def __init__(self, world: SyntheticWorld):
        self.world = world
        self.cfg = world.cfg
        self._tokens: dict[str, np.ndarray] = {}
        # ID label text features are reachable by name too
        for concept, row in zip(
            world.id_concepts, world.label_space.features.data
        ):
            self._tokens[concept.name] = np.array(row)
        for concept in world.ood_concepts:
            self._register(
                concept.name, concept.proto, self.cfg.text_noise, "label"
            )

    def _register(
        self, token: str, proto: np.ndarray, spread: float, salt: str
    ) -> np.ndarray:
        if token not in self._tokens:
            rng = np.random.default_rng(
                _hash_seed(self.cfg.seed, "token", salt, token)
            )
            self._tokens[token] = _perturb(proto, spread, rng)
        return self._tokens[token]

    def _describe_token(self, concept: Concept) -> str:
        if concept.role == "far":
            token = f"scene_{concept.name}"
            self._register(token, concept.proto, self.cfg.expressive_noise, "desc")
        else:
            parent = (
                self.world.id_concepts[concept.parent]
                if concept.role == "near"
                else concept
            )
            token = f"kin_{parent.name}"
            self._register(token, parent.proto, self.cfg.coarse_noise, "desc")
        return token

    def describe_image(self, image_ref: str, exclude_label: str) -> str:
        concept_name = self.world.image_concepts.get(image_ref)
        if concept_name is None:
            return "an unidentifiable object on a plain background"
        concept = self.world.concepts[concept_name]
        if self.cfg.describe_corruption > 0.0:
            rng = np.random.default_rng(
                _hash_seed(self.cfg.seed, "corrupt", image_ref)
            )
            if rng.random() < self.cfg.describe_corruption:
                names = sorted(self.world.concepts)
                concept = self.world.concepts[
                    names[rng.integers(len(names))]
                ]
        token = self._describe_token(concept)
        return f"a photo of something resembling {token} in the scene"

    def similar_labels(self, class_name: str, count: int) -> list[str]:
        concept = self.world.concepts.get(class_name)
        if concept is None or concept.role != "id":
            return [f"{class_name} twin {i}" for i in range(count)]
        p = concept.proto
        scored = sorted(
            (
                (
                    float(np.arccos(np.clip(np.dot(p, c.proto), -1.0, 1.0))),
                    c.name,
                )
                for c in self.world.ood_concepts
            ),
        )
        close = [
            name for angle, name in scored if angle <= self.cfg.similar_threshold
        ]
        out = close[:count]
        # invented lookalikes cluster around the nearest confusable concept
        # when one exists; otherwise they fan out around the class itself
        # (the false-negative failure mode of naive lookalike generation)
        if close:
            anchor = self.world.concepts[close[0]].proto
            twin_angle = 0.2
        else:
            anchor = p
            twin_angle = self.cfg.lookalike_angle
        i = 0
        while len(out) < count:
            token = f"{class_name} twin {i}"
            rng = np.random.default_rng(
                _hash_seed(self.cfg.seed, "twin", class_name, i)
            )
            self._tokens.setdefault(token, _rotate(anchor, twin_angle, rng))
            out.append(token)
            i += 1
        return out

    def _embed_one(self, text: str) -> np.ndarray:
        stripped = text
        template = self.world.label_space.prompt_template
        prefix, _, suffix = template.partition("<label>")
        if text.startswith(prefix) and text.endswith(suffix):
            stripped = text[len(prefix) : len(text) - len(suffix)]
        if stripped in self._tokens:
            base = self._tokens[stripped]
        else:
            base = None
            for token in sorted(self._tokens, key=len, reverse=True):
                if f" {token} " in f" {text} ":
                    base = self._tokens[token]
                    break
            if base is None:
                rng = np.random.default_rng(
                    _hash_seed(self.cfg.seed, "freetext", text)
                )
                return _unit(rng, self.cfg.dim)
        rng = np.random.default_rng(_hash_seed(self.cfg.seed, "embed", text))
        return _perturb(base, self.cfg.text_noise, rng)

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self._embed_one(t) for t in texts])


SCENARIOS = ("far", "near", "mixed")


def scenario_world_config(name: str, seed: int = 42) -> WorldConfig:
    base = dict(dim=64, n_id_classes=20, seed=seed)
    if name == "far":
        return WorldConfig(
            n_far_clusters=4,
            far_angle=0.75,
            far_spread=0.30,
            id_spread=0.25,
            corpus_random=200,
            corpus_far_words=24,
            corpus_word_noise=0.70,
            lookalike_angle=0.60,
            **base,
        )
    if name == "near":
        # three corpus words for six near classes: half the clusters are
        # invisible to the fixed word space, so the baseline has errors
        # that only the adaptive lookalike labels recover
        return WorldConfig(
            n_near_classes=6,
            near_offset=0.50,
            near_spread=0.30,
            id_spread=0.25,
            corpus_random=197,
            corpus_near_words=3,
            corpus_word_noise=0.70,
            coarse_noise=0.55,
            lookalike_angle=0.60,
            **base,
        )
    if name == "mixed":
        # mined negatives mix both regimes; description coarseness is set
        # so sentence and lookalike spaces split the work roughly evenly
        return WorldConfig(
            n_near_classes=4,
            n_far_clusters=3,
            far_angle=0.75,
            far_spread=0.30,
            near_offset=0.50,
            near_spread=0.30,
            id_spread=0.25,
            corpus_random=192,
            corpus_near_words=6,
            corpus_far_words=2,
            corpus_word_noise=0.70,
            coarse_noise=0.40,
            lookalike_angle=0.60,
            **base,
        )
    raise ConfigError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


def scenario_pipeline_config() -> PipelineConfig:
    # class_ratio is widened relative to the production default: with only
    # 20 ID classes the subset must still span every near-OOD parent
    return PipelineConfig(
        score=ScoreConfig(temperature=0.01, group_size=25),
        mining=MiningConfig(class_ratio=0.35),
        num_negatives=200,
    )


@dataclass(frozen=True)
class ScenarioResult:
    baseline: MetricReport
    adapted: MetricReport
    lambda_history: tuple[float, ...]
    baseline_records: list[ScoreRecord] = field(repr=False, default_factory=list)
    adapted_records: list[ScoreRecord] = field(repr=False, default_factory=list)
    ground_truth: dict[str, str] = field(repr=False, default_factory=dict)


def _split_scores(records, truth) -> tuple[list[float], list[float]]:
    id_scores = [r.s_ada for r in records if truth[r.image_id] == "ID"]
    ood_scores = [r.s_ada for r in records if truth[r.image_id] == "OOD"]
    return id_scores, ood_scores


def run_scenario(
    name: str,
    pipeline_cfg: PipelineConfig | None = None,
    n_batches: int = 5,
    id_per_batch: int = 400,
    ood_per_batch: int = 400,
    seed: int = 42,
) -> ScenarioResult:
    """Run the identical stream frozen at initialization and fully adaptive."""
    cfg = pipeline_cfg or scenario_pipeline_config()
    world_cfg = scenario_world_config(name, seed=seed)

    def one_run(adapt: bool):
        world = SyntheticWorld(world_cfg)
        batches = world.make_batches(n_batches, id_per_batch, ood_per_batch)
        truth = {}
        for batch in batches:
            for image_id, tag in zip(batch.images.ids, batch.ground_truth):
                truth[image_id] = tag
        run_cfg = replace(cfg, adapt=adapt)
        records, state = run_stream(
            batches, world.label_space, world.corpus,
            world.oracle_client(), run_cfg, seed=seed,
        )
        return records, state, truth

    base_records, _, truth = one_run(adapt=False)
    full_records, state, _ = one_run(adapt=True)
    base_report = compute_report(*_split_scores(base_records, truth))
    full_report = compute_report(*_split_scores(full_records, truth))
    return ScenarioResult(
        baseline=base_report,
        adapted=full_report,
        lambda_history=tuple(state.lambda_history),
        baseline_records=base_records,
        adapted_records=full_records,
        ground_truth=truth,
    )
