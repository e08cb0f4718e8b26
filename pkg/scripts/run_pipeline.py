"""Run adapt -> train -> detect -> backtest on the checked-in fixture.

Prints the headline table for both entry modes (open and close price of the
publish minute). With ``--update-golden`` the open-entry report and the
detections are copied over the golden files used by the acceptance tests.

    python scripts/run_pipeline.py --out /tmp/pipeline [--update-golden]
"""

import argparse
import shutil
from pathlib import Path

from eventtrade import cli

FIXTURE = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "pipeline"


def run(out: Path, fixture: Path) -> None:
    cfg = str(fixture / "config.yaml")
    steps = [
        ["adapt", "--config", cfg, "--articles", str(fixture / "adapt.jsonl"), "--out", str(out)],
        ["train", "--config", cfg, "--articles", str(fixture / "labeled.jsonl"),
         "--encoder", str(out / "encoder.bin"), "--out", str(out)],
        ["detect", "--config", cfg, "--articles", str(fixture / "articles.jsonl"), "--model", str(out / "model.bin"),
         "--pairs", str(fixture / "pairs.csv"), "--out", str(out)],
    ]
    for argv in steps:
        if cli.main(argv) != 0:
            raise SystemExit(f"step failed: {' '.join(argv[:1])}")
    for mode in ("CLOSE_MINUTE", "OPEN_MINUTE"):
        dest = out / mode.lower()
        print(f"\nentry at the {mode.split('_')[0].lower()} price of the publish minute")
        status = cli.main(["backtest", "--config", cfg, "--detections", str(out / "detections.jsonl"),
                           "--bars", str(fixture / "bars.csv"), "--calendar", str(fixture / "calendar.csv"),
                           "--entry-mode", mode, "--out", str(dest)])
        if status != 0:
            raise SystemExit("backtest failed")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/pipeline")
    ap.add_argument("--fixture", default=str(FIXTURE))
    ap.add_argument("--update-golden", action="store_true")
    args = ap.parse_args()
    out, fixture = Path(args.out), Path(args.fixture)
    run(out, fixture)
    if args.update_golden:
        golden = fixture / "golden"
        golden.mkdir(exist_ok=True)
        shutil.copy(out / "open_minute" / "report.json", golden / "report.json")
        shutil.copy(out / "detections.jsonl", golden / "detections.jsonl")
        print(f"\nupdated golden files in {golden}")


if __name__ == "__main__":
    main()
