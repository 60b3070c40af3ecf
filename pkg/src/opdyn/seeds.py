"""Deterministic 64-bit seed derivation.

A run is fully determined by (master_seed, key tuple): the keys are folded
into a splitmix64 chain, and the result seeds a fresh numpy PCG64 generator.
Reproducibility is guaranteed within this build, not across RNG libraries.
"""

_MASK = (1 << 64) - 1

# fixed stream tags
TAG_INIT = 1  # initial-state construction
TAG_DYNAMICS = 2  # micro-step draw stream
TAG_SPLIT = 3  # train/test split assignment
TAG_TOY = 4  # toy-model absorption runs


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix64(*keys: int) -> int:
    """Fold integer keys into one well-scrambled 64-bit seed."""
    h = 0
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h
