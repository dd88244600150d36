"""Exact averaging on a time-varying exponential graph.

With n = 2^k workers, pairing worker i with i + 2^t (t cycling through
0..k-1) and averaging gives every worker the exact global mean after k
exchanges. The push-sum weights stay at one for this schedule.

    python demos/exponential_graph.py
"""

import numpy as np

from relaysum.algorithms import GossipState, sgp_exchange

x0 = np.arange(8.0)[:, None]
state = GossipState.init(x0)
for k in range(3):
    state = sgp_exchange(state, 8)
    print(f"after exchange {k + 1}: {state.models[:, 0]}")
print("initial mean:", x0.mean())
