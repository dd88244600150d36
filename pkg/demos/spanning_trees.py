"""RelaySGD on a social network by way of random spanning trees.

The Davis Southern Women graph (32 nodes) is not a tree. RelaySGD runs on a
seeded spanning tree while D2 uses every edge with lazy Metropolis-Hastings
weights; the lazy version is needed because the plain weights have an
eigenvalue below -1/3.

    python demos/spanning_trees.py
"""

from dataclasses import replace

from relaysum.harness import ExperimentConfig, resolve_tree, tune_learning_rate

base = ExperimentConfig(topology="davis", n=32, zeta2=0.1, sigma2=0.1, r0=1.0, gamma=0.1, rounds=20_000)

d2 = tune_learning_rate(replace(base, algo="d2", lazy_gossip=True), 1e-5)
print(f"D2 on the full graph: {d2.steps} steps (gamma={d2.gamma})")
for seed in range(3):
    tree = resolve_tree("davis", 32, tree_seed=seed)
    res = tune_learning_rate(replace(base, tree_seed=seed), 1e-5)
    print(f"RelaySGD, spanning tree {seed} (diameter {tree.diameter}): {res.steps} steps (gamma={res.gamma})")
