"""The distance zoo behind variational objectives.

KL is what the ELBO minimises; the alpha family interpolates between the
two KL directions (mode-seeking vs mass-covering); Hellinger is the
symmetric member with a closed Gaussian form.  All three agree with
quadrature on a shared grid.
"""

import numpy as np

from bnnlab.prob import (DensityPair, alpha_divergence, hellinger_distance,
                         kl_diag_gaussians)


def main():
    p, q = (1.0, 1.0), (0.0, 1.5)   # (mean, sd) pairs
    pair = DensityPair.from_gaussians(p, q, n=8001)

    kl_pq = kl_diag_gaussians((np.array([p[0]]), np.array([p[1]])),
                              (np.array([q[0]]), np.array([q[1]])))
    kl_qp = kl_diag_gaussians((np.array([q[0]]), np.array([q[1]])),
                              (np.array([p[0]]), np.array([p[1]])))
    print(f"KL(p||q) = {kl_pq:.4f}   KL(q||p) = {kl_qp:.4f}  (asymmetric!)")

    print("\nalpha | D_alpha(p||q)")
    for a in (1e-4, 0.25, 0.5, 0.75, 1 - 1e-4):
        print(f" {a:5.2f} | {alpha_divergence(pair, a):.4f}")
    print("alpha -> 1 recovers KL(p||q); alpha -> 0 recovers KL(q||p)")

    h = hellinger_distance(pair)
    swapped = DensityPair(pair.grid, pair.q, pair.p)
    print(f"\nHellinger: {h:.4f}, swapped arguments: "
          f"{hellinger_distance(swapped):.4f} (symmetric, bounded by sqrt(2))")


if __name__ == "__main__":
    main()
