"""Lossy links: each message is lost with probability 10%.

The robust RelaySGD variant keeps per-message counters, so a lost message only
removes some contributions from one average. D2 relies on exact cancellation
between rounds and drifts once messages go missing. Under drops the robust
variant reaches 1e-4 quickly but then hovers around an error floor near 1e-3
because every lost message perturbs the average a little.

    python demos/dropped_messages.py
"""

from dataclasses import replace

from relaysum.harness import ExperimentConfig, run, tune_learning_rate

base = ExperimentConfig(topology="chain", n=8, zeta2=1.0, r0=10.0, gamma=0.1, rounds=2000)
for algo in ("relay-sgd-robust", "d2"):
    gamma = tune_learning_rate(replace(base, algo=algo), 1e-4).gamma
    for q in (0.0, 0.1):
        trace = run(replace(base, algo=algo, gamma=gamma, drop_prob=q))
        print(f"{algo:17s} q={q:.1f}  gamma={gamma:<5}  final subopt {trace.final_subopt:.2e}  "
              f"reaches 1e-4 at {trace.steps_to(1e-4)}")
