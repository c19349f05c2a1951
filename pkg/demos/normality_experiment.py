"""Replicated estimates of DQ^VaR against their normal limit.

Draws 300 samples of size 5000 from the equicorrelated normal model and
compares the spread of the estimates with the asymptotic variance.
Run with ``python demos/normality_experiment.py``.
"""
import numpy as np

from dqest.simharness import ExperimentSpec, run_histogram_experiment


def main():
    res = run_histogram_experiment(ExperimentSpec(estimator="dq-var", n_reps=300, seed=1))
    s = res.summary()
    print(f"truth {s['true_value']:.4f}  mean {s['mean']:.4f}")
    print(f"sigma2 {s['sigma2']:.4f}  N * sample variance {s['scaled_var']:.4f}")
    print(f"KS p-value {s['ks_pvalue']:.3f}  95% coverage {s['coverage_95']:.3f}")
    counts, edges = res.histogram()
    width = counts.max()
    for c, lo in zip(counts, edges[:-1]):
        print(f"{lo:7.4f} {'#' * int(round(40 * c / width))}")
    mid = 0.5 * (edges[:-1] + edges[1:])
    expected = res.normal_overlay(mid) * np.diff(edges) * res.ok.size
    print("normal-limit counts per bin:", np.round(expected).astype(int).tolist())


if __name__ == "__main__":
    main()
