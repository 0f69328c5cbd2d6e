"""Dataset-load script: deterministic pseudo-random points in [-1, 1]^2.

Params: ``n_points`` (default 16) and ``seed`` (default 0). The same
seed always yields the same dataset.
"""

import random


def load_dataset(ctx):
    n_points = int(ctx.params.get("n_points", 16))
    seed = int(ctx.params.get("seed", 0))
    rng = random.Random(seed)
    return [
        [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)] for _ in range(n_points)
    ]
