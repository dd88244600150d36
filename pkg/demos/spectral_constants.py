"""Mixing constants of relayed averaging, and the learning-rate correction.

With zero updates, the stacked history of RelaySGD models evolves by a fixed
stochastic matrix. `spectral_report` certifies a contraction factor
(1 - p) per step in blocks of m steps, giving rho = p / m. The correction
factor measures how much a single update is damped on its way through the
tree during warmup.

    python demos/spectral_constants.py
"""

from relaysum.algorithms import correction_factor
from relaysum.spectral import spectral_report
from relaysum.topology import build_topology

print("tree                    n   lambda2    m    rho         a")
for kind in ("chain", "star", "balanced-binary-tree"):
    for n in (4, 8, 16):
        tree = build_topology(kind, n)
        rep = spectral_report(tree, seed=0)
        a, _ = correction_factor(tree)
        print(f"{kind:22s} {n:3d}  {rep['lambda2']:.5f} {rep['m']:4d}  {rep['rho']:.3e}  {a:.4f}")
