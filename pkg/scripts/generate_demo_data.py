#!/usr/bin/env python3
"""Write synthetic candle CSVs for the file-backed config route.

Produces two hourly series under data/: a planted-signal series whose extra
columns make the classes learnable, and a plain random walk as a null control.
Both are deterministic for a given seed.
"""

import argparse
from pathlib import Path

from candlewalk.market_data import serialize_candles
from candlewalk.synthetic import generate_planted_series, generate_random_walk
from candlewalk.timeutil import parse_timestamp


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="data", help="directory for the CSVs")
    parser.add_argument("--bars", type=int, default=9490, help="hourly bars (~13 months)")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--noise", type=float, default=0.10, help="planted label noise rate")
    parser.add_argument("--start", default="2017-01-05T00:00:00Z")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = parse_timestamp(args.start)

    planted = generate_planted_series(
        args.bars, seed=args.seed, start=start, noise_rate=args.noise, symbol="SYN-USD"
    )
    (out / "syn_usd.csv").write_text(serialize_candles(planted.series), newline="")

    walk = generate_random_walk(args.bars, seed=args.seed + 1, start=start, symbol="WALK-USD")
    (out / "walk_usd.csv").write_text(serialize_candles(walk), newline="")

    print(f"wrote {out / 'syn_usd.csv'} ({args.bars} bars, planted signals)")
    print(f"wrote {out / 'walk_usd.csv'} ({args.bars} bars, random walk)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
