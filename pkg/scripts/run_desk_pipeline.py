"""End-to-end desk-scale pipeline: generate, train, evaluate, report.

Runs the CLI phases against scripts/desk_config.json.  Expect roughly
10-20 minutes on a laptop-class machine; pass --tiny for a seconds-scale
smoke run.
"""

import argparse
import json
import sys
import tempfile
from pathlib import Path

from sensemat.cli import main as cli_main

HERE = Path(__file__).resolve().parent


def run(config_path: str) -> int:
    for phase in ("gen-data", "train", "eval", "report"):
        code = cli_main([phase, "--config", config_path])
        if code != 0:
            print(f"phase {phase} failed with exit code {code}", file=sys.stderr)
            return code
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(HERE / "desk_config.json"))
    parser.add_argument("--tiny", action="store_true",
                        help="shrink the experiment to a smoke test")
    args = parser.parse_args()
    if not args.tiny:
        return run(args.config)
    cfg = json.loads(Path(args.config).read_text())
    cfg.update(
        n_antennas=16, n_channels=80, sparsity=2, m_sweep=[6],
        variants=["gae"], depth=3, max_epochs=10, patience=10,
        split_ratios=[0.5, 0.25, 0.25], n_baseline_seeds=1,
        eval_n_samples=None, solver_tol=1e-8,
        output_dir=cfg.get("output_dir", "runs/desk") + "_tiny",
    )
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(cfg, fh)
        tiny_path = fh.name
    return run(tiny_path)


if __name__ == "__main__":
    sys.exit(main())
