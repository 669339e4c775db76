import numpy as np


def stream(seed, *key) -> np.random.Generator:
    """Counter-based generator for the sub-stream ``(seed, *key)``.

    Streams with different keys are statistically independent, and the same
    ``(seed, key)`` always replays the same draws regardless of thread layout.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
