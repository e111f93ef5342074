"""Turn campaign CSVs into whitespace-separated columns for an external plotter.

    python scripts/plot_data.py out/consistency/summary.csv > mse.dat
    python scripts/plot_data.py out/compare/runs.csv > scatter.dat

Cell summaries give ``m N method mse crb_paper crb_independent``; run tables
give ``method theta0 theta_hat``. No plotting library is needed.
"""

import csv
import sys


def main(path: str) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "mse" in rows[0]:
        cols = ("m", "N", "method", "mse", "crb_paper", "crb_independent")
    else:
        cols = ("method", "theta0", "theta_hat")
    print("# " + " ".join(cols))
    for row in rows:
        print(" ".join(row[c] for c in cols))


if __name__ == "__main__":
    main(sys.argv[1])
