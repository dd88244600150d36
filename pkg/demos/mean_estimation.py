"""Distributed mean estimation: every worker learns the global sample mean.

Each of 8 workers on a chain draws one N(1, 1) sample per round. Relayed sums
let every worker track the running total and count of all samples it has
heard of, so its error falls like 1 / (number of samples), the best possible.

    python demos/mean_estimation.py
"""

from relaysum.harness import dme_experiment
from relaysum.topology import build_topology

res = dme_experiment(build_topology("chain", 8), [16, 64, 256, 1024], replicates=50, seed=0)
for T, mse in zip(res["T"], res["mse"]):
    print(f"T={T:5d}  mse={mse:.3e}  mse * 8T = {mse * 8 * T:.3f}")
print(f"log-log slope against samples: {res['slope']:.3f}")
