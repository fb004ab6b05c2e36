#!/usr/bin/env python3
"""Full desk run: teacher -> stage1 -> stage2, then eval + bench reports.

Everything goes through the CLI so a run is reproducible from the shell;
artifacts land in --out-dir (checkpoints, loss CSVs, eval/bench reports).
"""

import argparse
import sys
import time
from pathlib import Path

from streamfx.cli import main as cli


def run(args: list[str]) -> None:
    print(f"$ streamfx {' '.join(args)}", flush=True)
    code = cli(args)
    if code != 0:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1]
                                            / "configs" / "desk.cfg"))
    ap.add_argument("--out-dir", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-data", action="store_true",
                    help="skip the dataset dump (training renders on the fly)")
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = ["--config", args.config, "--seed", str(args.seed)]
    teacher = out / "teacher.sfx"
    stage1 = out / "stage1.sfx"
    stage2 = out / "stage2.sfx"

    t0 = time.perf_counter()
    if not args.skip_data:
        run(["gen-data", *cfg, "--out", str(out / "data")])
    run(["train-teacher", *cfg, "--out", str(teacher)])
    run(["distill-stage1", *cfg, "--checkpoint", str(teacher),
         "--out", str(stage1)])
    run(["distill-stage2", *cfg, "--checkpoint", str(stage1),
         "--out", str(stage2)])
    for name, ckpt in [("stage1", stage1), ("stage2", stage2)]:
        run(["eval", "--config", args.config, "--checkpoint", str(ckpt),
             "--out", str(out / f"eval_{name}.csv")])
    run(["bench", "--config", args.config, "--checkpoint", str(stage2),
         "--out", str(out / "bench.csv")])
    print(f"pipeline done in {(time.perf_counter() - t0) / 60:.1f} min; "
          f"artifacts in {out}")


if __name__ == "__main__":
    main()
