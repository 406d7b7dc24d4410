"""Command-line front end.

Commands: ingest, run, eval, sweep, synth-world, fixtures record|replay.
A run is described by a JSON manifest:

    {
      "config": "config.json" | {inline config dict},
      "client": {"mode": "synthetic", "scenario": "far",
                 "n_batches": 3, "id_per_batch": 150, "ood_per_batch": 150}
              | {"mode": "replay", "fixtures": "fixtures/"}
              | {"mode": "http", "endpoint": "...", "auth_token": "..."},
      "labels": "labels.json",
      "corpus": {"embeddings": "corpus.nspc", "words": "corpus_words.json"},
      "batches": ["batch_000.nspc", ...],
      "truth": "truth.csv",
      "output_dir": "out",
      "seed": 42
    }

Synthetic mode rebuilds the whole world from scenario + seed, so the
labels/corpus/batches entries are optional there. The HTTP endpoint and
auth token fall back to the NEGTEXT_ENDPOINT / NEGTEXT_AUTH_TOKEN
environment variables. Exit codes: 0 success, 2 success with degraded
generation (stale negative spaces), 1 any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .clients import (
    GenerationClient,
    HttpGenerationClient,
    RecordingClient,
    ReplayClient,
)
from .embeddings import (
    EmbeddingMatrix,
    LabelSpace,
    TestBatch,
    load_embeddings,
    save_embeddings,
)
from .errors import ConfigError, InputError, NegtextError
from .metrics import SCORE_FMT, compute_report, export_results, load_records_csv
from .pipeline import PipelineConfig, run_stream, save_checkpoint
from .spaces import CorpusCandidates
from .synthetic import (
    SCENARIOS,
    SyntheticWorld,
    scenario_pipeline_config,
    scenario_world_config,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEGRADED = 2

SWEEP_AXES = ("delta", "lambda", "eta", "length")

ENV_ENDPOINT = "NEGTEXT_ENDPOINT"
ENV_AUTH_TOKEN = "NEGTEXT_AUTH_TOKEN"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; code 2 is reserved for degraded runs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


# ---------------------------------------------------------------------------
# manifest handling


class Manifest:
    def __init__(self, spec: dict, base_dir: Path):
        self.spec = spec
        self.base_dir = base_dir

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise InputError(f"manifest not found: {path}")
        spec = json.loads(path.read_text(encoding="utf-8"))
        manifest = cls(spec, path.parent)
        manifest.validate_paths()
        return manifest

    def _resolve(self, rel) -> Path:
        return (self.base_dir / rel).resolve()

    def referenced_paths(self) -> list[Path]:
        paths = []
        config = self.spec.get("config")
        if isinstance(config, str):
            paths.append(self._resolve(config))
        for key in ("labels", "truth"):
            if self.spec.get(key):
                paths.append(self._resolve(self.spec[key]))
        corpus = self.spec.get("corpus") or {}
        for key in ("embeddings", "words"):
            if corpus.get(key):
                paths.append(self._resolve(corpus[key]))
        for entry in self.spec.get("batches") or []:
            paths.append(self._resolve(entry))
        client = self.spec.get("client") or {}
        if client.get("mode") == "replay" and client.get("fixtures"):
            paths.append(self._resolve(client["fixtures"]))
        return paths

    def validate_paths(self) -> None:
        missing = [str(p) for p in self.referenced_paths() if not p.exists()]
        if missing:
            raise InputError(f"manifest references missing paths: {missing}")

    @property
    def client_spec(self) -> dict:
        client = self.spec.get("client")
        if not isinstance(client, dict) or "mode" not in client:
            raise ConfigError("manifest needs a client block with a mode")
        return client

    @property
    def seed(self) -> int:
        return int(self.spec.get("seed", 0))

    def output_dir(self, override=None) -> Path:
        out = override or self.spec.get("output_dir")
        if not out:
            raise ConfigError("no output directory (manifest output_dir or --out)")
        return (self.base_dir / out).resolve() if override is None else Path(out)

    def pipeline_config(self, overrides=None) -> PipelineConfig:
        config = self.spec.get("config")
        if isinstance(config, str):
            spec = json.loads(self._resolve(config).read_text(encoding="utf-8"))
        elif isinstance(config, dict):
            spec = dict(config)
        elif self.client_spec["mode"] == "synthetic":
            spec = scenario_pipeline_config().to_dict()
        else:
            spec = {}
        for key, value in (overrides or {}).items():
            _apply_override(spec, key, value)
        return PipelineConfig.from_dict(spec)


def _apply_override(spec: dict, dotted_key: str, value) -> None:
    parts = dotted_key.split(".")
    node = spec
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-object key {part!r}")
    node[parts[-1]] = value


def _parse_set_flags(pairs) -> dict:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            overrides[key] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key] = raw
    return overrides


# ---------------------------------------------------------------------------
# input assembly


def _load_truth_csv(path) -> dict[str, str]:
    truth = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            truth[row["image_id"]] = row["tag"]
    return truth


def _save_truth_csv(truth: dict[str, str], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "tag"])
        for image_id, tag in truth.items():
            writer.writerow([image_id, tag])


class RunInputs:
    def __init__(self, label_space, corpus, batches, truth, client):
        self.label_space = label_space
        self.corpus = corpus
        self.batches = batches
        self.truth = truth  # dict image_id -> tag, possibly empty
        self.client = client


def _build_client(manifest: Manifest, world=None) -> GenerationClient:
    client_spec = manifest.client_spec
    mode = client_spec["mode"]
    if mode == "synthetic":
        if world is None:
            raise ConfigError("synthetic client requires a scenario world")
        return world.oracle_client()
    if mode == "replay":
        fixtures = client_spec.get("fixtures")
        if not fixtures:
            raise ConfigError("replay client needs a fixtures directory")
        return ReplayClient(manifest._resolve(fixtures))
    if mode == "http":
        endpoint = client_spec.get("endpoint") or os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise ConfigError(
                f"http client needs an endpoint ({ENV_ENDPOINT} or manifest)"
            )
        token = client_spec.get("auth_token") or os.environ.get(ENV_AUTH_TOKEN)
        return HttpGenerationClient(endpoint, auth_token=token)
    raise ConfigError(f"unknown client mode {mode!r}")


def _build_world(manifest: Manifest) -> SyntheticWorld:
    client_spec = manifest.client_spec
    scenario = client_spec.get("scenario")
    if not scenario:
        raise ConfigError("synthetic client needs a scenario name")
    return SyntheticWorld(scenario_world_config(scenario, seed=manifest.seed))


def _assemble_inputs(manifest: Manifest, client_override=None) -> RunInputs:
    client_spec = manifest.client_spec
    if client_spec["mode"] == "synthetic":
        world = _build_world(manifest)
        batches = world.make_batches(
            int(client_spec.get("n_batches", 3)),
            int(client_spec.get("id_per_batch", 150)),
            int(client_spec.get("ood_per_batch", 150)),
        )
        truth = {
            image_id: tag
            for batch in batches
            for image_id, tag in zip(batch.images.ids, batch.ground_truth)
        }
        client = client_override or _build_client(manifest, world)
        return RunInputs(world.label_space, world.corpus, batches, truth, client)

    for key in ("labels", "corpus", "batches"):
        if not manifest.spec.get(key):
            raise ConfigError(f"manifest needs {key!r} outside synthetic mode")
    label_space = LabelSpace.from_manifest(manifest._resolve(manifest.spec["labels"]))
    corpus_spec = manifest.spec["corpus"]
    words = json.loads(
        manifest._resolve(corpus_spec["words"]).read_text(encoding="utf-8")
    )
    corpus = CorpusCandidates(
        words=tuple(words),
        features=load_embeddings(manifest._resolve(corpus_spec["embeddings"])),
    )
    truth = (
        _load_truth_csv(manifest._resolve(manifest.spec["truth"]))
        if manifest.spec.get("truth")
        else {}
    )
    batches = []
    for entry in manifest.spec["batches"]:
        images = load_embeddings(manifest._resolve(entry))
        tags = tuple(truth[i] for i in images.ids) if truth else None
        batches.append(TestBatch(images=images, ground_truth=tags))
    client = client_override or _build_client(manifest)
    return RunInputs(label_space, corpus, batches, truth, client)


# ---------------------------------------------------------------------------
# commands


def _write_records_csv_no_truth(records, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_id", "s_nl", "s_ens", "s_vsnl", "s_ada", "predicted_class", "tag"]
        )
        for r in records:
            writer.writerow(
                [
                    r.image_id,
                    SCORE_FMT % r.s_nl,
                    SCORE_FMT % r.s_ens,
                    SCORE_FMT % r.s_vsnl,
                    SCORE_FMT % r.s_ada,
                    r.predicted_class,
                    "",
                ]
            )


def _execute_run(manifest: Manifest, args, client_override=None) -> int:
    config = manifest.pipeline_config(_parse_set_flags(getattr(args, "set", None)))
    inputs = _assemble_inputs(manifest, client_override=client_override)
    out_dir = manifest.output_dir(getattr(args, "out", None))
    out_dir.mkdir(parents=True, exist_ok=True)

    records, state = run_stream(
        inputs.batches,
        inputs.label_space,
        inputs.corpus,
        inputs.client,
        config,
        seed=manifest.seed,
    )
    if inputs.truth:
        export_results(records, inputs.truth, out_dir)
    else:
        _write_records_csv_no_truth(records, out_dir / "records.csv")
    save_checkpoint(state, out_dir / "checkpoint.nckp")
    if state.degraded:
        print(
            "warning: generation degraded; stale negative spaces were used",
            file=sys.stderr,
        )
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_run(args) -> int:
    return _execute_run(Manifest.load(args.manifest), args)


def cmd_eval(args) -> int:
    records, tags = load_records_csv(args.records)
    truth = _load_truth_csv(args.truth) if args.truth else tags
    missing = [r.image_id for r in records if r.image_id not in truth]
    if missing:
        raise InputError(f"records without ground truth: {missing[:10]}")
    id_scores = [r.s_ada for r in records if truth[r.image_id] == "ID"]
    ood_scores = [r.s_ada for r in records if truth[r.image_id] == "OOD"]
    report = compute_report(id_scores, ood_scores)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


_AXIS_KEYS = {
    "delta": "mining.class_ratio",
    "eta": "mining.selection_ratio",
    "length": "sentence_len_max",
}


def _sweep_overrides(axis: str, value: float) -> dict:
    if axis == "lambda":
        return {"mode": "fixed-lambda", "score.lambda_override": value}
    if axis == "length":
        return {_AXIS_KEYS[axis]: int(value)}
    return {_AXIS_KEYS[axis]: value}


def cmd_sweep(args) -> int:
    values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    if len(values) < 2:
        raise InputError("sweep needs at least two values")
    manifest = Manifest.load(args.manifest)
    base_overrides = _parse_set_flags(args.set)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    degraded = False
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.axis, "auroc", "fpr95", "n_id", "n_ood"])
        fh.flush()
        for value in values:
            overrides = dict(base_overrides)
            overrides.update(_sweep_overrides(args.axis, value))
            config = manifest.pipeline_config(overrides)
            inputs = _assemble_inputs(manifest)
            if not inputs.truth:
                raise InputError("sweep requires ground truth")
            records, state = run_stream(
                inputs.batches,
                inputs.label_space,
                inputs.corpus,
                inputs.client,
                config,
                seed=manifest.seed,
            )
            degraded = degraded or state.degraded
            # quantize like the records exporter so sweep rows agree with
            # the report a plain run of the same config would produce
            id_scores = [
                float(SCORE_FMT % r.s_ada)
                for r in records
                if inputs.truth[r.image_id] == "ID"
            ]
            ood_scores = [
                float(SCORE_FMT % r.s_ada)
                for r in records
                if inputs.truth[r.image_id] == "OOD"
            ]
            report = compute_report(id_scores, ood_scores)
            writer.writerow(
                ["%g" % value, "%.9g" % report.auroc, "%.9g" % report.fpr95,
                 report.n_id, report.n_ood]
            )
            fh.flush()
    return EXIT_DEGRADED if degraded else EXIT_OK


def cmd_ingest(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise InputError(f"input not found: {src}")
    if src.suffix == ".npy":
        if not args.ids:
            raise InputError("--ids is required for .npy input")
        data = np.load(src)
        ids = [
            line.strip()
            for line in Path(args.ids).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    elif src.suffix == ".csv":
        ids, rows = [], []
        with src.open(newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                ids.append(row[0])
                rows.append([float(x) for x in row[1:]])
        data = np.asarray(rows, dtype=np.float64)
    else:
        raise InputError(f"unsupported input format {src.suffix!r} (.npy or .csv)")
    matrix = EmbeddingMatrix.from_rows(ids, data)
    save_embeddings(matrix, args.out)
    print(f"wrote {matrix.rows} x {matrix.dim} embeddings to {args.out}")
    return EXIT_OK


def cmd_synth_world(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = SyntheticWorld(scenario_world_config(args.scenario, seed=args.seed))
    batches = world.make_batches(args.batches, args.id_per_batch, args.ood_per_batch)

    world.label_space.save_manifest(out_dir / "labels.json", "labels.nspc")
    save_embeddings(world.corpus.features, out_dir / "corpus.nspc")
    (out_dir / "corpus_words.json").write_text(
        json.dumps(list(world.corpus.words), indent=2), encoding="utf-8"
    )
    truth: dict[str, str] = {}
    batch_names = []
    for i, batch in enumerate(batches):
        name = f"batch_{i:03d}.nspc"
        save_embeddings(batch.images, out_dir / name)
        batch_names.append(name)
        truth.update(zip(batch.images.ids, batch.ground_truth))
    _save_truth_csv(truth, out_dir / "truth.csv")
    (out_dir / "config.json").write_text(
        json.dumps(scenario_pipeline_config().to_dict(), indent=2, sort_keys=True),
        encoding="utf-8",
    )
    manifest = {
        "config": "config.json",
        "client": {
            "mode": "synthetic",
            "scenario": args.scenario,
            "n_batches": args.batches,
            "id_per_batch": args.id_per_batch,
            "ood_per_batch": args.ood_per_batch,
        },
        "labels": "labels.json",
        "corpus": {"embeddings": "corpus.nspc", "words": "corpus_words.json"},
        "batches": batch_names,
        "truth": "truth.csv",
        "output_dir": "out",
        "seed": args.seed,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2), encoding="utf-8"
    )
    print(f"wrote {args.scenario} world fixtures to {out_dir}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    manifest = Manifest.load(args.manifest)
    fixtures_dir = Path(args.fixtures)
    if args.action == "record":
        client_spec = manifest.client_spec
        if client_spec["mode"] == "synthetic":
            inner = _build_world(manifest).oracle_client()
        else:
            inner = _build_client(manifest)
        client = RecordingClient(inner, fixtures_dir)
    else:  # replay
        if not fixtures_dir.exists():
            raise InputError(f"fixtures directory not found: {fixtures_dir}")
        client = ReplayClient(fixtures_dir)
    return _execute_run(manifest, args, client_override=client)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="negtext", description=__doc__.split("\n")[0])
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="upper bound on internal fan-out (current pipeline is serial)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert raw embeddings to the binary format")
    p.add_argument("input", help="source .npy (with --ids) or .csv (id,v0,v1,...)")
    p.add_argument("--ids", help="text file with one row id per line (.npy input)")
    p.add_argument("-o", "--out", required=True, help="output .nspc path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="execute a stream described by a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="override the manifest output directory")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config field, e.g. --set score.temperature=0.1",
    )
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="recompute metrics from an exported records CSV")
    p.add_argument("records")
    p.add_argument("--truth", help="CSV with image_id,tag (default: tags in records)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run the pipeline across one config axis")
    p.add_argument("axis", choices=SWEEP_AXES)
    p.add_argument("manifest")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("-o", "--out", required=True, help="output CSV path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth-world", help="dump a synthetic world as CLI fixtures")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--batches", type=int, default=3)
    p.add_argument("--id-per-batch", type=int, default=150)
    p.add_argument("--ood-per-batch", type=int, default=150)
    p.set_defaults(func=cmd_synth_world)

    p = sub.add_parser("fixtures", help="record or replay generation fixtures")
    p.add_argument("action", choices=("record", "replay"))
    p.add_argument("manifest")
    p.add_argument("--fixtures", required=True, help="fixtures directory")
    p.add_argument("--out", help="override the manifest output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NegtextError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
