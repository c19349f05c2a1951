"""Population DQ values and asymptotic variances on the default elliptical models.

Run with ``python demos/truth_and_variance.py``.
"""
from dqest.elliptical import EllipticalModel
from dqest.simharness import theory_sigma2, true_value

KINDS = ("dq-var", "dq-es", "dq-ex", "dr-var", "dr-es")


def main():
    models = {
        "normal": EllipticalModel.equicorrelated("normal", 5, 0.3),
        "t3": EllipticalModel.equicorrelated("t", 5, 0.3, 3.0),
    }
    print(f"{'index':8s} " + " ".join(f"{m + ' value':>12s} {m + ' sigma2':>12s}" for m in models))
    for kind in KINDS:
        cells = []
        for m in models.values():
            cells.append(f"{true_value(m, kind, 0.1):12.4f} {theory_sigma2(m, kind, 0.1).sigma2:12.4f}")
        print(f"{kind:8s} " + " ".join(cells))


if __name__ == "__main__":
    main()
