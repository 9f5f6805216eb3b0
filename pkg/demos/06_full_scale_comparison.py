"""Full-size comparison: N=2000, D=100, C=1000, minibatch 50, K=20, 2000 steps.

Runs exact, both sampled likelihoods, ranking and BlackOut through the CLI,
then renders the log-likelihood and parameter-difference charts. Expect a
few minutes of compute.
"""
from manyclass.cli import main

main(["gen-data", "--n", "2000", "--d", "100", "--c", "1000", "--seed", "1",
      "--out", "full_scale.txt"])
code = main(["compare", "--data", "full_scale.txt", "--alpha", "1", "--search-lr",
             "ranking,blackout", "--out", "full_scale.csv", "--verbose"])
print("compare exit status", code)
main(["plot", "--input", "full_scale.csv", "--out-dir", "."])
