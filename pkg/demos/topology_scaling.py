"""Steps to 1e-6 as the network grows: chains against balanced binary trees.

On a chain the farthest update needs n - 2 relays to arrive, so convergence
time grows roughly linearly. A balanced binary tree has logarithmic depth.

    python demos/topology_scaling.py
"""

from dataclasses import replace

from relaysum.harness import ExperimentConfig, tune_learning_rate

base = ExperimentConfig(zeta2=1.0, r0=10.0, gamma=0.1, rounds=50_000)
for topology in ("chain", "balanced-binary-tree"):
    steps = []
    for n in (4, 8, 16, 32):
        steps.append(tune_learning_rate(replace(base, topology=topology, n=n), 1e-6).steps)
    print(f"{topology:22s} n=4..32 -> {steps}")
