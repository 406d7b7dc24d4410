#!/usr/bin/env python3
"""Ablation sweeps over the synthetic worlds.

Sweeps one config axis at a time (class-subset ratio delta, fixed mixing
weight lambda, negative-image selection ratio eta, or the sentence-length
cap) and prints one metrics row per value. The same seeded world is
rebuilt per value so rows differ only by the swept parameter.
"""
import argparse

from negtext.metrics import compute_report
from negtext.pipeline import PipelineConfig, run_stream
from negtext.synthetic import (
    SCENARIOS,
    SyntheticWorld,
    scenario_pipeline_config,
    scenario_world_config,
)

AXES = {
    "delta": lambda spec, v: spec["mining"].__setitem__("class_ratio", v),
    "eta": lambda spec, v: spec["mining"].__setitem__("selection_ratio", v),
    "length": lambda spec, v: spec.__setitem__("sentence_len_max", int(v)),
    "lambda": lambda spec, v: (
        spec.__setitem__("mode", "fixed-lambda"),
        spec["score"].__setitem__("lambda_override", v),
    ),
}

DEFAULT_VALUES = {
    "delta": "0.05,0.1,0.2,0.35,0.5,0.8",
    "eta": "0.1,0.3,0.5,0.7,0.9",
    "length": "4,8,15",
    "lambda": "0,0.25,0.5,0.75,1",
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("axis", choices=sorted(AXES))
    parser.add_argument("--scenario", choices=SCENARIOS, default="mixed")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--values", help="comma-separated; default per axis")
    parser.add_argument("--batches", type=int, default=3)
    parser.add_argument("--per-side", type=int, default=150)
    args = parser.parse_args()

    values = [
        float(v) for v in (args.values or DEFAULT_VALUES[args.axis]).split(",")
    ]
    print(f"{args.axis:>8} {'auroc':>9} {'fpr95':>9}")
    for value in values:
        spec = scenario_pipeline_config().to_dict()
        AXES[args.axis](spec, value)
        cfg = PipelineConfig.from_dict(spec)
        world = SyntheticWorld(scenario_world_config(args.scenario, seed=args.seed))
        batches = world.make_batches(args.batches, args.per_side, args.per_side)
        truth = {
            i: t
            for b in batches
            for i, t in zip(b.images.ids, b.ground_truth)
        }
        records, _ = run_stream(
            batches, world.label_space, world.corpus, world.oracle_client(),
            cfg, seed=args.seed,
        )
        report = compute_report(
            [r.s_ada for r in records if truth[r.image_id] == "ID"],
            [r.s_ada for r in records if truth[r.image_id] == "OOD"],
        )
        print(f"{value:>8g} {report.auroc:>9.4f} {report.fpr95:>9.4f}")


if __name__ == "__main__":
    main()
