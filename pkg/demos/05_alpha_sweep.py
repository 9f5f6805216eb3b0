"""Sweep the ranking margin and chart how far each fit lands from the truth.

The suggested margin is ln(C - 1), the value that links ranking to a
single-sample likelihood estimate. All ranking runs share one learning rate.
Writes alpha_sweep.csv and SVG charts to the current directory.
"""
from manyclass.cli import main

main(["alpha-sweep", "--n", "600", "--d", "20", "--c", "200", "--gen-seed", "2",
      "--iterations", "800", "--search-ranking-lr", "--pilot-iterations", "100",
      "--out", "alpha_sweep.csv"])
main(["plot", "--input", "alpha_sweep.csv", "--out-dir", "."])
