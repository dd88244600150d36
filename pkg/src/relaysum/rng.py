"""Keyed random streams.

Every draw is addressed by ``(seed, purpose, step)`` and rows are indexed by
worker, so values never depend on evaluation order or on how many draws
happened before.
"""

import numpy as np

NOISE = 1
DROPS = 2
SAMPLES = 3
INIT = 4


def stream(seed: int, purpose: int, step: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), purpose, int(step)])))


def samples(seed: int, replicate: int, step: int, n: int, d: int, mean: float = 1.0) -> np.ndarray:
    """Unit-variance Gaussian samples around ``mean`` for mean-estimation experiments."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), SAMPLES, replicate, step])))
    return mean + gen.standard_normal((n, d))


def gradient_noise(seed: int, step: int, n: int, d: int, sigma2: float) -> np.ndarray:
    """Isotropic Gaussian noise with ``E||row||^2 = sigma2`` for each of ``n`` workers."""
    if sigma2 == 0:
        return np.zeros((n, d))
    return stream(seed, NOISE, step).standard_normal((n, d)) * np.sqrt(sigma2 / d)


def drop_mask(seed: int, step: int, n_messages: int, q: float) -> np.ndarray:
    """Boolean mask over directed messages; ``True`` means the message is lost."""
    if q <= 0:
        return np.zeros(n_messages, dtype=bool)
    return stream(seed, DROPS, step).random(n_messages) < q
