"""
Module provides the canonical pseudo-random number generator used by every stochastic
operation in pathomil (initialization, dropout, shuffling, synthetic data).

The generator is xoshiro256** seeded through splitmix64, so that identical seeds produce
identical streams on every platform. Array draws are generated by a bank of independently
seeded xoshiro256** lanes that are advanced in lock-step with NumPy.
"""
import math
import numpy as np


_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_SPLITMIX_MUL1 = 0xBF58476D1CE4E5B9
_SPLITMIX_MUL2 = 0x94D049BB133111EB
_TWO_POW_MINUS_53 = 1.0 / (1 << 53)
_MAX_LANES = 1024


def _splitmix64_mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _SPLITMIX_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _SPLITMIX_MUL2) & _MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def derive_seed(seed: int, index: int) -> int:
    """
    Derives an independent sub-seed from a master seed and an index -- e.g. one seed per
    synthetic bag or per cross-validation fold.

    Parameters
    ----------
    seed : `int`
        Master seed.
    index : `int`
        Index of the sub-stream.

    Returns
    -------
    `int`
        Derived 64-bit seed.
    """
    if not isinstance(seed, int):
        raise TypeError(f"'seed' must be an instance of 'int' but not of '{type(seed)}'")
    if not isinstance(index, int):
        raise TypeError(f"'index' must be an instance of 'int' but not of '{type(index)}'")
    if index < 0:
        raise ValueError("'index' can not be negative")

    return _splitmix64_mix((seed + (index + 1) * _GOLDEN_GAMMA) & _MASK64)


def _splitmix64_array(seed: int, count: int) -> np.ndarray:
    """Returns the first `count` outputs of a splitmix64 stream as `numpy.uint64`."""
    with np.errstate(over="ignore"):
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed & _MASK64) + steps * np.uint64(_GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_SPLITMIX_MUL1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_SPLITMIX_MUL2)
        return z ^ (z >> np.uint64(31))


def _rotl_array(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class CanonicalRng():
    """
    Seeded xoshiro256** generator.

    Parameters
    ----------
    seed : `int`
        Seed -- expanded into the 256-bit state by splitmix64.
    """
    def __init__(self, seed: int):
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise TypeError(f"'seed' must be an instance of 'int' but not of '{type(seed)}'")

        self.__seed = seed
        state = seed & _MASK64
        self.__s = []
        for _ in range(4):
            state = (state + _GOLDEN_GAMMA) & _MASK64
            self.__s.append(_splitmix64_mix(state))

    @property
    def seed(self) -> int:
        """
        Returns the seed this generator was created with.

        Returns
        -------
        `int`
            Seed.
        """
        return self.__seed

    def next_u64(self) -> int:
        """
        Returns the next raw 64-bit output.

        Returns
        -------
        `int`
            Unsigned 64-bit integer.
        """
        s = self.__s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64

        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)

        return result

    def uniform(self) -> float:
        """
        Returns a uniformly distributed double in [0, 1) built from the upper 53 bits.

        Returns
        -------
        `float`
            Uniform sample.
        """
        return (self.next_u64() >> 11) * _TWO_POW_MINUS_53

    def gaussian(self) -> float:
        """
        Returns a standard normal sample (Box-Muller, consumes exactly two uniform draws).

        Returns
        -------
        `float`
            Gaussian sample.
        """
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2. * math.log(1. - u1)) * math.cos(2. * math.pi * u2)

    def randbelow(self, n: int) -> int:
        """
        Returns a uniformly distributed integer in {0, ..., n-1}.

        Parameters
        ----------
        n : `int`
            Exclusive upper bound.

        Returns
        -------
        `int`
            Random integer.
        """
        if n <= 0:
            raise ValueError("'n' must be positive")
        return min(int(self.uniform() * n), n - 1)

    def randint(self, low: int, high: int) -> int:
        """
        Returns a uniformly distributed integer in {low, ..., high} (inclusive bounds).
        """
        if high < low:
            raise ValueError("'high' must not be smaller than 'low'")
        return low + self.randbelow(high - low + 1)

    def shuffle(self, items: list) -> None:
        """
        Shuffles a list in-place (Fisher-Yates, from the last position downwards).

        Parameters
        ----------
        items : `list`
            List to be shuffled.
        """
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        """
        Returns a random permutation of {0, ..., n-1}.

        Parameters
        ----------
        n : `int`
            Number of elements.

        Returns
        -------
        `list[int]`
            Permutation.
        """
        items = list(range(n))
        self.shuffle(items)
        return items

    def uniform_array(self, size) -> np.ndarray:
        """
        Returns an array of uniform samples in [0, 1).

        One 64-bit output of this generator seeds a bank of lanes (splitmix64); the lanes
        are advanced in lock-step and their outputs are interleaved in row-major order.

        Parameters
        ----------
        size : `int` or `tuple[int]`
            Shape of the array.

        Returns
        -------
        `numpy.ndarray`
            Uniform samples (float64).
        """
        shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        total = int(np.prod(shape, dtype=np.int64))
        if total == 0:
            return np.zeros(shape, dtype=np.float64)

        n_lanes = min(total, _MAX_LANES)
        lanes = _splitmix64_array(self.next_u64(), 4 * n_lanes).reshape(4, n_lanes)
        s0, s1, s2, s3 = lanes[0].copy(), lanes[1].copy(), lanes[2].copy(), lanes[3].copy()

        n_steps = -(-total // n_lanes)
        out = np.empty((n_steps, n_lanes), dtype=np.uint64)
        with np.errstate(over="ignore"):
            for step in range(n_steps):
                out[step] = _rotl_array(s1 * np.uint64(5), 7) * np.uint64(9)
                t = s1 << np.uint64(17)
                s2 ^= s0
                s3 ^= s1
                s1 ^= s2
                s0 ^= s3
                s2 ^= t
                s3 = _rotl_array(s3, 45)

        samples = (out.ravel()[:total] >> np.uint64(11)).astype(np.float64) * _TWO_POW_MINUS_53
        return samples.reshape(shape)

    def gaussian_array(self, size) -> np.ndarray:
        """
        Returns an array of standard normal samples -- Box-Muller on consecutive pairs of
        uniform draws (first draw of a pair feeds the radius, second one the angle).

        Parameters
        ----------
        size : `int` or `tuple[int]`
            Shape of the array.

        Returns
        -------
        `numpy.ndarray`
            Gaussian samples (float64).
        """
        shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
        total = int(np.prod(shape, dtype=np.int64))
        u = self.uniform_array(2 * total)
        z = np.sqrt(-2. * np.log1p(-u[0::2])) * np.cos(2. * np.pi * u[1::2])
        return z.reshape(shape)

    def uniform_range(self, low: float, high: float, size) -> np.ndarray:
        """
        Returns an array of uniform samples in [low, high).
        """
        return low + (high - low) * self.uniform_array(size)
