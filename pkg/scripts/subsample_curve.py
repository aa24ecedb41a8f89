"""Sample-efficiency curve on the synthetic cube (10%..100% of the training pool, 4 repeats).

    python scripts/subsample_curve.py [--out runs] [--jobs 4]
"""
import argparse
import tempfile
from pathlib import Path

from hylite.cli import main as cli_main
from hylite.config import save_config
from hylite.protocols import SYNTH_CURVE, monotone_with_slack, read_curve


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=4)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "curve.cfg"
        save_config(cfg_path, SYNTH_CURVE.with_(out=args.out, run_name="synth_subsample_curve"))
        cli_main(["subsample-curve", "--config", str(cfg_path), "--jobs", str(args.jobs),
                  "--repeats", str(args.repeats)])
    fractions, oa = read_curve(Path(args.out) / "synth_subsample_curve" / "subsample_curve.csv")
    ok, drops = monotone_with_slack(oa)
    print("monotone (one drop <= 1 point allowed):", ok, "drops:", drops)


if __name__ == "__main__":
    main()
