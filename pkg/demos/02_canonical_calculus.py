"""Exact canonical-ensemble calculus on boxed sectors.

Prints the 1/k expansion residual sequence for a three-site monomial
(the k^2-scaled residual settles onto a plateau), the exact binomial
moment bounds for the recentered drift, and the sector spectral gaps
whose k^2 law powers the relaxation estimates.
"""

from kpzlab import (WindowFunction, canonical_moment_bounds,
                    expansion_residual, grand_canonical_mean, psi_canonical,
                    spectral_gap, wasep)


def recenter(f, rho):
    psi1 = grand_canonical_mean(f, rho, deriv=1)
    return f - grand_canonical_mean(f, rho) - (WindowFunction.site(f.lo) - rho) * psi1


def main():
    f = WindowFunction.site(1) * WindowFunction.site(2) * WindowFunction.site(3)
    print("Psi(8, m) for m = 0..8:")
    print("  ", [float(psi_canonical(f, 8, m)) for m in range(9)])
    print("k^2 * expansion residual:")
    for k in (4, 16, 64, 256):
        print(f"  k={k:4d}: {k * k * expansion_residual(f, k).max_abs:.4f}")

    fc = recenter(wasep().drift_function(), 0.5)
    print("k^3 * second residual moment (exact binomial sums):")
    for k in (8, 64, 512):
        mb = canonical_moment_bounds(fc, 0.5, k)
        print(f"  k={k:4d}: {mb.residual_moment2_scaled:.5f}")

    print("gap * k^2 across sectors (one-particle to half-filled):")
    for k in (4, 8, 12):
        vals = [k * k * spectral_gap(wasep(), k, m) for m in range(1, k)]
        print(f"  k={k:2d}: min {min(vals):.2f}  max {max(vals):.2f}")


if __name__ == "__main__":
    main()
