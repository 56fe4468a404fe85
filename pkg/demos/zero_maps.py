"""How often does a CAM vanish entirely?

For i.i.d. Gaussian dense weights with mean mu and spread sigma, each pixel
of the Hadamard map is Gaussian with z-score mu1 / sigma1, while the
averaged-gradient map has that z-score multiplied by the map side n.  With
a slightly negative mu the classical map is therefore far more likely to be
zero after the ReLU.  Here the theory is compared with a Monte Carlo run.

    python demos/zero_maps.py
"""
import numpy as np

from vegam.stats import zero_map_monte_carlo, zero_map_probs

rng = np.random.default_rng(0)
A = rng.gamma(1.5, 0.5, size=(32, 14, 14))  # non-negative, ReLU-like activations
mu, sigma = -1.7e-3, 0.08

theory = zero_map_probs(A, mu, sigma)
mc = zero_map_monte_carlo(A, mu, sigma, trials=10_000, seed=1)

print("mean Pr(pixel > 0)      theory    monte carlo")
print(f"  modified            {theory.p_modified.mean():.4f}    {mc.frac_modified.mean():.4f}")
print(f"  classical           {theory.p_classical.mean():.4f}    {mc.frac_classical.mean():.4f}")
se = mc.standard_error(theory.p_modified)
print(f"worst modified deviation: {np.max(np.abs(mc.frac_modified - theory.p_modified) / se):.2f} SE")
print(f"whole map zero: modified {mc.zero_modified:.4f}, classical {mc.zero_classical:.4f}")
