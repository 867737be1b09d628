"""PAC/PVC sensitivity for each input channel set on one generated cohort.

    python scripts/channel_ablation.py --max-epochs 8 --patience 3
"""
import argparse
import logging
import sys

from pulsegru.experiment import CohortConfig, run_cv, synthetic_dataset
from pulsegru.signals import ChannelConfig
from pulsegru.training import TrainConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", nargs="+", default=["ppg", "hr-acc", "four"])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--max-epochs", type=int, default=200)
    ap.add_argument("--patience", type=int, default=40)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stdout, format="%(asctime)s %(message)s")

    ds = synthetic_dataset(CohortConfig(seed=args.seed))
    tcfg = TrainConfig(max_epochs=args.max_epochs, patience=args.patience, seed=args.seed)
    rows = []
    for name in args.channels:
        res = run_cv(ds, ChannelConfig(name), tcfg)
        rows.append((name, res.sensitivity(), res.seconds))
    print(f"{'channels':<8} {'NSR':>7} {'AF':>7} {'PAC/PVC':>8} {'time':>7}")
    for name, s, secs in rows:
        print(f"{name:<8} {s['NSR']:>7.3f} {s['AF']:>7.3f} {s['PAC/PVC']:>8.3f} {secs:>6.0f}s")


if __name__ == "__main__":
    main()
