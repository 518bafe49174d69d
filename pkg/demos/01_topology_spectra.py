# coding: utf-8

# # Mixing matrices and how fast gossip forgets
#
# Every client averages its adapters with its neighbours using a symmetric,
# doubly stochastic matrix Q.  The second largest eigenvalue magnitude beta
# decides how quickly repeated averaging reaches consensus.

import numpy as np

from declora.rng import stream
from declora.topology import (
    build_erdos_renyi,
    build_ring,
    mixing_complete,
    mixing_exponential,
    mixing_from_laplacian,
    mixing_from_ring,
    spectral_contraction,
)

# ## Rings get slower as they grow

for n in (4, 8, 16, 32):
    mm = mixing_from_ring(build_ring(n))
    closed = (1 + 2 * np.cos(2 * np.pi / n)) / 3
    print(f"ring n={n:2d}  beta={mm.beta:.6f}  closed form={closed:.6f}  rho={mm.rho:.4f}")

# ## Random graphs: denser means faster mixing

n = 20
for p_c in (0.2, 0.5, 0.8):
    g = build_erdos_renyi(n, p_c, stream(0, "topology"))
    mm = mixing_from_laplacian(g)
    print(f"ER p_c={p_c}  edges={len(g.edges):3d}  beta={mm.beta:.4f}")

print("exponential n=16 beta =", round(mixing_exponential(16).beta, 4))
print("complete    n=16 beta =", mixing_complete(16).beta)

# ## Contraction toward the average
#
# The distance of Q^N from the exact averaging matrix shrinks as beta^N.

mm = mixing_from_ring(build_ring(10))
for N in (1, 5, 10, 20):
    print(f"N={N:2d}  ||Q^N - J||={spectral_contraction(mm, N):.3e}  beta^N={mm.beta ** N:.3e}")
