#!/usr/bin/env python3
"""End-to-end pipeline on the nominal rig: train a model-based agent, extract
its stimulation pattern, collect perturbed sessions on a reality-gap copy of
the simulator, fine-tune offline, and compare cycling speed before and after.

Everything lands in the output directory (checkpoints, patterns, SVGs, logs,
evaluation CSVs).  Expect roughly 10 minutes on a desktop CPU.

    python scripts/run_pipeline.py --out runs/demo --muscles 2 --seed 100
"""

import argparse
import json
from pathlib import Path

from fescycle import biomech, cli


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/pipeline")
    parser.add_argument("--muscles", type=int, default=2, choices=(2, 3))
    parser.add_argument("--seed", type=int, default=100)
    parser.add_argument("--gap-seed", type=int, default=1)
    parser.add_argument("--max-episodes", type=int, default=60)
    parser.add_argument("--finetune-epochs", type=int, default=50)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config_path = out / "config.json"
    config_path.write_text(biomech.config_to_json(biomech.nominal_config(args.muscles)))
    gap_path = out / "gap.json"
    gap_path.write_text(json.dumps({"seed": args.gap_seed}, indent=2) + "\n")

    def run(*argv):
        print("::", " ".join(argv))
        rc = cli.main(list(argv))
        if rc != 0:
            raise SystemExit(rc)

    agent = out / "agent.json"
    run("train", str(config_path), "--out", str(agent),
        "--curve", str(out / "curve.csv"),
        "--max-episodes", str(args.max_episodes), "--seed", str(args.seed))

    pattern = out / "pattern_model_based.json"
    run("extract", str(agent), str(config_path),
        "--out", str(pattern), "--svg", str(out / "pattern_model_based.svg"))

    run("evaluate", str(config_path), str(pattern),
        "--out", str(out / "eval_nominal.csv"), "--seed", str(args.seed))
    run("evaluate", str(config_path), str(pattern), "--gap", str(gap_path),
        "--out", str(out / "eval_gap_model_based.csv"), "--seed", str(args.seed))

    logs = out / "logs"
    run("collect", str(config_path), str(pattern), "--gap", str(gap_path),
        "--out", str(logs), "--seed", str(args.seed))

    agent_ft = out / "agent_finetuned.json"
    run("finetune", str(agent), str(logs), "--out", str(agent_ft),
        "--epochs", str(args.finetune_epochs), "--seed", str(args.seed))

    pattern_ft = out / "pattern_fine_tuned.json"
    run("extract", str(agent_ft), str(config_path),
        "--out", str(pattern_ft), "--svg", str(out / "pattern_fine_tuned.svg"))

    run("evaluate", str(config_path), str(pattern_ft), "--gap", str(gap_path),
        "--out", str(out / "eval_gap_fine_tuned.csv"), "--seed", str(args.seed))

    run("compare", str(pattern), str(pattern_ft),
        "--out", str(out / "pattern_comparison.json"))
    print(f"artifacts in {out}")


if __name__ == "__main__":
    main()
