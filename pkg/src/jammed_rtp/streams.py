"""Counter-based random streams (Philox4x32-10) vectorised over replicas.

Every uniform is a pure function of (seed, replica, tag, draw index), so a
replica produces the same numbers whether it is simulated alone or inside an
ensemble, and regardless of how the ensemble is chunked.
"""

from __future__ import annotations

import numpy as np

__all__ = ["philox4x32", "Streams", "TAG_DYNAMICS", "TAG_INIT", "TAG_AUX"]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

TAG_DYNAMICS = 0
TAG_INIT = 1
TAG_AUX = 2


def philox4x32(ctr, key, rounds: int = 10):
    """Philox4x32 block function.

    ``ctr`` is a sequence of four uint32 arrays (broadcastable), ``key`` a pair
    of uint32 scalars or arrays.  Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in ctr)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK for k in key)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _S32, p0 & _MASK
        hi1, lo1 = p1 >> _S32, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return tuple(c.astype(np.uint32) for c in (c0, c1, c2, c3))


class Streams:
    """One independent stream per replica, each with its own draw counter.

    A draw yields two uniforms in [0, 1) with 53 random bits each.
    """

    def __init__(self, seed: int, replicas, tag: int = TAG_DYNAMICS):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must lie in [0, 2^64)")
        self.seed = seed
        self.key = (np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32))
        self.replicas = np.atleast_1d(np.asarray(replicas, dtype=np.uint64))
        if np.any(self.replicas >= np.uint64(2**32)):
            raise ValueError("replica index must fit in 32 bits")
        self.tag = int(tag)
        self.counter = np.zeros(self.replicas.shape, dtype=np.uint64)

    @property
    def size(self) -> int:
        return int(self.replicas.size)

    def child(self, tag: int) -> "Streams":
        return Streams(self.seed, self.replicas, tag)

    def _block(self, replicas, counters):
        ctr = (
            counters & _MASK,
            counters >> _S32,
            replicas,
            np.full(replicas.shape, self.tag, dtype=np.uint64),
        )
        x0, x1, x2, x3 = (w.astype(np.uint64) for w in philox4x32(ctr, self.key))
        u = ((x0 << _S32) | x1) >> np.uint64(11)
        w = ((x2 << _S32) | x3) >> np.uint64(11)
        scale = 2.0**-53
        return u.astype(float) * scale, w.astype(float) * scale

    def uniform2(self, idx=None):
        """Two uniforms for the replicas selected by ``idx`` (all if None)."""
        if idx is None:
            reps, cnt = self.replicas, self.counter
            out = self._block(reps, cnt)
            self.counter = cnt + np.uint64(1)
            return out
        reps = self.replicas[idx]
        cnt = self.counter[idx]
        out = self._block(reps, cnt)
        self.counter[idx] = cnt + np.uint64(1)
        return out

    def uniform(self, idx=None):
        return self.uniform2(idx)[0]

    def prefetch(self, replica_pos: int, count: int):
        """Next ``count`` draws of a single replica, advancing its counter."""
        start = self.counter[replica_pos]
        cnt = start + np.arange(count, dtype=np.uint64)
        reps = np.full(count, self.replicas[replica_pos], dtype=np.uint64)
        self.counter[replica_pos] = start + np.uint64(count)
        return self._block(reps, cnt)
