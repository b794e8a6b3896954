"""Human-normalized scores for the shipped per-game Atari means.

Prints the 11-game and 8-game means per agent next to the published
figures, so any gap between recomputed and published numbers is visible.

    python scripts/hns_summary.py
"""

import csv
import io

from sanex import diagnostics as diag


def main():
    baselines = diag.load_baselines()
    subset = [g for g in diag.shipped_text("subset8.txt").splitlines() if g.strip()]
    print("agent,games,mean_hns,published,difference")
    for r in csv.DictReader(io.StringIO(diag.shipped_text("reported_means.csv"))):
        rows = csv.DictReader(io.StringIO(diag.shipped_text(f"atari_means/{r['agent']}.csv")))
        scores = {row["game"]: float(row["score"]) for row in rows}
        mean = diag.mean_hns(scores, baselines, subset if r["suite"] == "8" else None)
        published = float(r["reported_mean_hns"])
        print(f"{r['agent']},{r['suite']},{mean:.4f},{published},{mean - published:+.4f}")


if __name__ == "__main__":
    main()
