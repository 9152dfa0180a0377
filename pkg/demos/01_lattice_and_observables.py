"""Ring configurations, window functions, and the fluctuation field.

Builds a few local observables with the table algebra, samples product
measures, and checks the CLT normalization Var[Y(G)] -> chi |G|^2 that
everything downstream relies on.
"""

import numpy as np

from kpzlab import (WindowFunction, eval_Y, grand_canonical_mean,
                    sample_grand_canonical, wasep)
from kpzlab.harness import make_test_function


def main():
    rho = 0.5
    nn = WindowFunction.site(0) * WindowFunction.site(1)
    drift = wasep().drift_function()
    print("E[eta(0) eta(1)] at rho=1/2:", grand_canonical_mean(nn, rho))
    print("drift window:", (drift.lo, drift.hi), "table:", drift.table)
    print("psi(rho) of the drift:", grand_canonical_mean(drift, rho))

    n, ell = 64, 4
    G = make_test_function("sine", n, ell)
    rng = np.random.default_rng(1)
    ys = np.array([eval_Y(sample_grand_canonical(n * ell, rho, rng), G, rho)
                   for _ in range(4000)])
    target = rho * (1 - rho) * G.l2sq()
    print(f"Var[Y(G)] = {ys.var(ddof=1):.4f}  vs chi |G|^2 = {target:.4f}")


if __name__ == "__main__":
    main()
