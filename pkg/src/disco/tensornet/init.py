import math

import numpy as np


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def conv_kernel(rng, cin, cout, dtype=np.float32):
    return glorot_uniform(rng, (3, 3, cin, cout), 9 * cin, 9 * cout, dtype)


def dense(rng, n_in, n_out, dtype=np.float32):
    return glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
