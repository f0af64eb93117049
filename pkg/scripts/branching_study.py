"""Train the matched two-branch runs and write a JSON report.

    python scripts/branching_study.py --root runs/acceptance --out runs/acceptance/report.json
"""
import argparse
import json
import logging
from pathlib import Path

from yflow.experiments import STUDY_SEEDS, run_study


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default="runs/acceptance")
    ap.add_argument("--out", default=None)
    ap.add_argument("--iterations", type=int, default=10000)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(STUDY_SEEDS))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    report = run_study(args.root, args.seeds, args.iterations, args.seeds[:1])
    text = json.dumps(report, indent=2, sort_keys=True)
    out = Path(args.out) if args.out else Path(args.root) / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")
    print(text)


if __name__ == "__main__":
    main()
