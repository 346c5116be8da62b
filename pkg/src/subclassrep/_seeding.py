import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for job ``keys`` under ``seed``; independent of execution order."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) for k in keys)]))
