"""Counter-based random number streams.

Every sampler step consumes a fixed budget of three uniforms:

    (1) move-type Bernoulli, (2) proposal variate, (3) acceptance uniform

and the t-th triple of a stream is a pure function of
(seed, replica, level, substream, t).  This makes replicas embarrassingly
parallel, lets vectorised replica engines generate whole blocks of variates
up front, and makes the p_ee = 0 reductions exact: a degenerate branch still
burns its variates, so two samplers sharing a stream stay in lockstep.

The generator is the SplitMix64 sequence: output j of a stream with key k is
mix64(k + (j+1) * GOLDEN), where mix64 is the SplitMix64 finalizer.  The key
itself is produced by folding (seed, replica, level, substream) through the
same finalizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
# SplitMix64 finalizer multipliers
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# numpy scalar copies for the vectorised path
_NP_GOLDEN = np.uint64(_GOLDEN)
_NP_M1 = np.uint64(_M1)
_NP_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

_INV_2_53 = 1.0 / float(1 << 53)

# substream roles
SUB_INIT = 0
SUB_STEPS = 1


def mix64(z: int) -> int:
    """SplitMix64 finalizer on python ints (mod 2^64)."""
    z &= _MASK
    z = (z ^ (z >> 30)) * _M1 & _MASK
    z = (z ^ (z >> 27)) * _M2 & _MASK
    return z ^ (z >> 31)


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _NP_M1
    z = (z ^ (z >> _S27)) * _NP_M2
    return z ^ (z >> _S31)


def stream_key(seed: int, replica: int, level: int, substream: int = SUB_STEPS) -> int:
    """Fold the stream id into a 64-bit key."""
    k = mix64(seed)
    k = mix64(k + _GOLDEN * (replica + 1))
    k = mix64(k + _GOLDEN * (level + 1))
    k = mix64(k + _GOLDEN * (substream + 1))
    return k


def _to_unit(z: int) -> float:
    # use the top 53 bits; result in [0, 1)
    return (z >> 11) * _INV_2_53


@dataclass(frozen=True)
class RngStream:
    """One logical stream of step triples, addressable by step index t."""

    seed: int
    replica: int = 0
    level: int = 0
    substream: int = SUB_STEPS

    @property
    def key(self) -> int:
        return stream_key(self.seed, self.replica, self.level, self.substream)

    def uniform(self, index: int) -> float:
        """The index-th raw uniform of this stream (index = 3*t + j)."""
        return _to_unit(mix64(self.key + _GOLDEN * (index + 1)))

    def triple(self, t: int) -> tuple[float, float, float]:
        """The fixed 3-uniform budget of step t."""
        base = 3 * t
        return (self.uniform(base), self.uniform(base + 1), self.uniform(base + 2))

    def block(self, t0: int, t1: int) -> np.ndarray:
        """Triples for steps t0..t1-1 as an (t1-t0, 3) array."""
        idx = np.arange(3 * t0 + 1, 3 * t1 + 1, dtype=np.uint64)
        z = _mix64_np(np.uint64(self.key) + _NP_GOLDEN * idx)
        u = (z >> _S11).astype(np.float64) * _INV_2_53
        return u.reshape(-1, 3)


def uniform_block(
    seed: int,
    replicas: np.ndarray,
    level: int,
    t0: int,
    t1: int,
    substream: int = SUB_STEPS,
) -> np.ndarray:
    """Vectorised triples for many replicas at once.

    Returns an array of shape (t1 - t0, 3, len(replicas)); entry [t, j, r]
    equals RngStream(seed, replicas[r], level, substream).triple(t0 + t)[j].
    """
    keys = np.array(
        [stream_key(seed, int(r), level, substream) for r in replicas], dtype=np.uint64
    )
    idx = np.arange(3 * t0 + 1, 3 * t1 + 1, dtype=np.uint64)
    z = _mix64_np(keys[None, :] + _NP_GOLDEN * idx[:, None])
    u = (z >> _S11).astype(np.float64) * _INV_2_53
    return u.reshape(t1 - t0, 3, len(keys))
