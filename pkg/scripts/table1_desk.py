"""Power of the block ensemble versus a single full-vector scan as the
mean change gets sparser.

    python scripts/table1_desk.py [--design scripts/designs/table1.toml] [--trials 50]
"""

import argparse
import time
from pathlib import Path

from abcdcp.simlab import load_design, power_study, write_power_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--design", default=str(Path(__file__).parent / "designs" / "table1.toml"))
    ap.add_argument("--trials", type=int)
    ap.add_argument("--out", default="results/table1_desk.csv")
    args = ap.parse_args()

    d = load_design(args.design)
    trials = args.trials or d["trials"]
    t0 = time.time()
    study = power_study(d["cells"], d["detectors"], trials, d["alphas"], d["radius"],
                        U=d["U"], seed=d["seed"], threshold=d["threshold"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_power_csv(study, out)
    out.with_suffix(".json").write_text(study.to_json())

    names = [det.name for det in d["detectors"]]
    print(f"{'cell':>10} " + " ".join(f"{n:>8}" for n in names))
    for cell in d["cells"]:
        row = {r["detector"]: r["power"] for r in study.rows if r["cell"] == cell.name}
        print(f"{cell.name:>10} " + " ".join(f"{row[n]:8.2f}" for n in names))
    print(f"{trials} trials per cell, {time.time() - t0:.0f}s; wrote {out}")


if __name__ == "__main__":
    main()
