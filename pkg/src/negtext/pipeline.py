"""Streaming loop: cache, mine, regenerate spaces, score, adapt the weight.

Per batch: the batch joins the historical cache, negative images and the
similar ID-class subset are mined from the cache (always against the
fixed initial negative-label space), the two adaptive spaces are
regenerated through the client, the mixing weight is recomputed from the
mined negatives, and the batch is scored. Generation failures leave the
previous spaces in force and flag the state as degraded instead of
stalling the stream.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .clients import GenerationClient
from .embeddings import (
    EmbeddingMatrix,
    LabelSpace,
    NegativeSpace,
    SpaceKind,
    TestBatch,
    load_embeddings,
    save_embeddings,
)
from .errors import ConfigError, FormatError, GenerationError, InputError
from .mining import (
    HistoryCache,
    MiningConfig,
    classify_batch,
    mine_negative_images,
    mine_similar_classes,
)
from .scoring import (
    ScoreConfig,
    ScoreRecord,
    adaptive_lambda,
    fused_score,
    grouped_scores_batch,
)
from .spaces import CorpusCandidates, generate_ens, generate_vsnl, select_initial_nls

MODES = ("adaptive", "ens-only", "vsnl-only", "fixed-lambda")

CHECKPOINT_MAGIC = b"NCKP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    score: ScoreConfig = field(default_factory=ScoreConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    num_negatives: int = 10000
    regen_every: int = 1
    mode: str = "adaptive"
    include_current_batch: bool = True
    adapt: bool = True  # False freezes both spaces at initialization
    sentence_len_min: int = 3
    sentence_len_max: int = 15

    def __post_init__(self):
        if self.num_negatives < self.score.group_size:
            raise ConfigError(
                "negative count must be at least one scoring group"
            )
        if self.regen_every < 1:
            raise ConfigError("regeneration interval must be >= 1")
        if not 1 <= self.sentence_len_min <= self.sentence_len_max:
            raise ConfigError("sentence length window must satisfy 1 <= min <= max")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.mode == "fixed-lambda" and self.score.lambda_override is None:
            raise ConfigError("fixed-lambda mode requires a lambda override")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, spec: dict) -> "PipelineConfig":
        spec = dict(spec)
        score = ScoreConfig(**spec.pop("score", {}))
        mining = MiningConfig(**spec.pop("mining", {}))
        return cls(score=score, mining=mining, **spec)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class StreamState:
    label_space: LabelSpace
    config: PipelineConfig
    cache: HistoryCache
    nl_space: NegativeSpace
    ens_space: NegativeSpace
    vsnl_space: NegativeSpace
    lambda_: float
    epoch: int
    rng_seed: int
    degraded: bool = False
    lambda_history: list[float] = field(default_factory=list)


def init_stream(
    ids: LabelSpace,
    corpus: CorpusCandidates,
    cfg: PipelineConfig,
    seed: int,
) -> StreamState:
    """Fresh state: both adaptive spaces alias the initial NL selection."""
    nl_space = select_initial_nls(
        corpus, ids, cfg.num_negatives, cfg.score.group_size
    )
    return StreamState(
        label_space=ids,
        config=cfg,
        cache=HistoryCache(cfg.mining.cache_capacity, ids.features.dim, seed),
        nl_space=nl_space,
        ens_space=nl_space,
        vsnl_space=nl_space,
        lambda_=0.5,
        epoch=0,
        rng_seed=seed,
    )


def _effective_lambda(state: StreamState) -> float:
    mode = state.config.mode
    if mode == "ens-only":
        return 1.0
    if mode == "vsnl-only":
        return 0.0
    if mode == "fixed-lambda":
        return float(state.config.score.lambda_override)
    return state.lambda_


def _regenerate(state: StreamState, client: GenerationClient) -> None:
    cfg = state.config
    cache_matrix = state.cache.matrix()
    cache_ids = state.cache.ids
    nl_scores = grouped_scores_batch(
        cache_matrix, state.label_space, state.nl_space, cfg.score
    )
    mined = mine_negative_images(cache_ids, nl_scores, cfg.mining)
    if mined.empty:
        return
    predictions = classify_batch(cache_matrix, state.label_space)
    predicted_labels = {
        image_id: state.label_space.labels[predictions[idx]]
        for image_id, idx in zip(mined.image_ids, mined.indices)
    }
    ens_space = generate_ens(
        mined,
        predicted_labels,
        state.label_space,
        client,
        cfg.num_negatives,
        cfg.score.group_size,
        seed=state.rng_seed,
        epoch=state.epoch + 1,
        len_min=cfg.sentence_len_min,
        len_max=cfg.sentence_len_max,
    )
    subset = mine_similar_classes(predictions, state.label_space, cfg.mining)
    vsnl_space = generate_vsnl(
        subset,
        state.label_space,
        client,
        cfg.num_negatives,
        cfg.score.group_size,
        epoch=state.epoch + 1,
    )
    neg_vectors = cache_matrix[list(mined.indices)]
    ens_scores = grouped_scores_batch(
        neg_vectors, state.label_space, ens_space, cfg.score
    )
    vsnl_scores = grouped_scores_batch(
        neg_vectors, state.label_space, vsnl_space, cfg.score
    )
    state.ens_space = ens_space
    state.vsnl_space = vsnl_space
    state.lambda_ = adaptive_lambda(ens_scores, vsnl_scores)


def process_batch(
    state: StreamState, batch: TestBatch, client: GenerationClient
) -> list[ScoreRecord]:
    """One streaming step; returns score records for the current batch."""
    cfg = state.config
    if batch.images.dim != state.label_space.features.dim:
        raise InputError(
            f"batch dim {batch.images.dim} vs label dim "
            f"{state.label_space.features.dim}"
        )
    if cfg.include_current_batch:
        state.cache.append_batch(batch)
    if cfg.adapt and len(state.cache) > 0 and state.epoch % cfg.regen_every == 0:
        try:
            _regenerate(state, client)
        except GenerationError:
            state.degraded = True
    if not cfg.include_current_batch:
        state.cache.append_batch(batch)

    images = batch.images.data
    lam = _effective_lambda(state)
    s_nl = grouped_scores_batch(images, state.label_space, state.nl_space, cfg.score)
    s_ens = grouped_scores_batch(images, state.label_space, state.ens_space, cfg.score)
    s_vsnl = grouped_scores_batch(
        images, state.label_space, state.vsnl_space, cfg.score
    )
    predictions = classify_batch(images, state.label_space)
    records = [
        ScoreRecord(
            image_id=batch.images.ids[i],
            s_nl=float(s_nl[i]),
            s_ens=float(s_ens[i]),
            s_vsnl=float(s_vsnl[i]),
            s_ada=fused_score(float(s_ens[i]), float(s_vsnl[i]), lam),
            predicted_class=int(predictions[i]),
        )
        for i in range(batch.images.rows)
    ]
    state.epoch += 1
    state.lambda_history.append(lam)
    return records


def run_stream(
    batches,
    ids: LabelSpace,
    corpus: CorpusCandidates,
    client: GenerationClient,
    cfg: PipelineConfig,
    seed: int,
) -> tuple[list[ScoreRecord], StreamState]:
    batches = list(batches)
    if not batches:
        raise InputError("at least one batch is required")
    state = init_stream(ids, corpus, cfg, seed)
    records: list[ScoreRecord] = []
    for batch in batches:
        records.extend(process_batch(state, batch, client))
    return records, state


def _space_blob(space: NegativeSpace) -> bytes:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "space.nspc"
        save_embeddings(space.features, path)
        payload = path.read_bytes()
    return payload


def _space_meta(space: NegativeSpace) -> dict:
    return {
        "kind": space.kind.value,
        "texts": list(space.texts),
        "ids": list(space.features.ids),
        "group_size": space.group_size,
        "epoch": space.epoch,
    }


def save_checkpoint(state: StreamState, path) -> None:
    """Single-file checkpoint: JSON header + embedded binary matrices."""
    spaces = {
        "nl": state.nl_space,
        "ens": state.ens_space,
        "vsnl": state.vsnl_space,
    }
    blobs: list[bytes] = []
    meta: dict[str, dict] = {}
    for name, space in spaces.items():
        meta[name] = _space_meta(space)
        blobs.append(_space_blob(space))
    cache_matrix = state.cache.matrix().astype("<f4")
    header = {
        "epoch": state.epoch,
        "lambda": state.lambda_,
        "lambda_history": state.lambda_history,
        "rng_seed": state.rng_seed,
        "degraded": state.degraded,
        "config": state.config.to_dict(),
        "config_hash": state.config.digest(),
        "labels": list(state.label_space.labels),
        "label_ids": list(state.label_space.features.ids),
        "prompt_template": state.label_space.prompt_template,
        "cache": state.cache.state_dict(),
        "cache_shape": list(cache_matrix.shape),
        "spaces": meta,
        "blob_sizes": [],
    }
    label_blob = np.ascontiguousarray(
        state.label_space.features.data, dtype="<f4"
    ).tobytes()
    payloads = [label_blob, cache_matrix.tobytes()] + blobs
    header["label_shape"] = [
        state.label_space.features.rows,
        state.label_space.features.dim,
    ]
    header["blob_sizes"] = [len(b) for b in payloads]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for blob in payloads:
            fh.write(blob)


def _matrix_from_nspc_bytes(blob: bytes, ids) -> EmbeddingMatrix:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "space.nspc"
        path.write_bytes(blob)
        sidecar = Path(tmp) / "space.nspc.ids.json"
        sidecar.write_text(json.dumps(list(ids)), encoding="utf-8")
        return load_embeddings(path)


def load_checkpoint(path) -> StreamState:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    cursor = 16 + header_len
    payloads = []
    for size in header["blob_sizes"]:
        payloads.append(raw[cursor : cursor + size])
        cursor += size
    label_rows, label_dim = header["label_shape"]
    label_data = np.frombuffer(payloads[0], dtype="<f4").astype(np.float64)
    label_features = EmbeddingMatrix.from_rows(
        header["label_ids"], label_data.reshape(label_rows, label_dim)
    )
    label_space = LabelSpace(
        labels=tuple(header["labels"]),
        features=label_features,
        prompt_template=header["prompt_template"],
    )
    cache_rows, cache_dim = header["cache_shape"]
    cache_data = np.frombuffer(payloads[1], dtype="<f4").astype(np.float64)
    cache_data = cache_data.reshape(cache_rows, cache_dim)
    cache = HistoryCache.from_state(
        header["cache"], cache_data, header["rng_seed"]
    )
    spaces = {}
    for i, name in enumerate(["nl", "ens", "vsnl"]):
        meta = header["spaces"][name]
        features = _matrix_from_nspc_bytes(payloads[2 + i], meta["ids"])
        spaces[name] = NegativeSpace(
            kind=SpaceKind(meta["kind"]),
            texts=tuple(meta["texts"]),
            features=features,
            group_size=meta["group_size"],
            epoch=meta["epoch"],
        )
    config = PipelineConfig.from_dict(header["config"])
    return StreamState(
        label_space=label_space,
        config=config,
        cache=cache,
        nl_space=spaces["nl"],
        ens_space=spaces["ens"],
        vsnl_space=spaces["vsnl"],
        lambda_=header["lambda"],
        epoch=header["epoch"],
        rng_seed=header["rng_seed"],
        degraded=header["degraded"],
        lambda_history=list(header["lambda_history"]),
    )
