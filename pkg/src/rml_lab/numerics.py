"""Deterministic numerical kernel: softmax/cross-entropy primitives, order
statistics, weighted sampling, and reproducible counter-based random streams.

Everything here is pure given its inputs.  Random functions take an explicit
RngStream; two streams built from the same (seed, stream_id) replay the same
sequence bit for bit, across runs and machines.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

# Additive floor inside log() so losses stay finite; keeps exp(-loss*(loss+eps))
# strictly positive downstream.
LOSS_FLOOR = 1e-12

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer (avalanches all 64 bits)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


_PHILOX_TEMPLATE = {
    "bit_generator": "Philox",
    "state": {
        "counter": np.zeros(4, dtype=np.uint64),
        "key": np.zeros(2, dtype=np.uint64),
    },
    "buffer": np.zeros(4, dtype=np.uint64),
    "buffer_pos": 4,
    "has_uint32": 0,
    "uinteger": 0,
}


class RngStream:
    """Counter-based random stream: Philox keyed by (seed, stream_id).

    Distinct stream_ids under one seed give statistically independent
    sequences, so one logical sampling site gets one stream and never
    perturbs another.  `child(i)` derives a new stream deterministically;
    it is how per-epoch / per-sample keying is done everywhere in this
    package.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            # Key assignment through the state dict instead of
            # Philox(key=...): the keyed constructor still gathers OS
            # entropy for a SeedSequence it never uses, which dominates the
            # cost of creating many small per-sample streams.  Output is
            # bit-identical to Philox(key=[seed, stream_id]).
            bg = np.random.Philox(seed=0)
            _PHILOX_TEMPLATE["state"]["key"][0] = self.seed
            _PHILOX_TEMPLATE["state"]["key"][1] = self.stream_id
            bg.state = _PHILOX_TEMPLATE
            self._gen = np.random.Generator(bg)
        return self._gen

    @property
    def counter(self) -> int:
        """Low word of the Philox block counter (draw-progress indicator)."""
        if self._gen is None:
            return 0
        return int(self.generator.bit_generator.state["state"]["counter"][0])

    def child(self, index: int) -> "RngStream":
        """Derive an independent substream keyed by `index`."""
        mixed = _splitmix64((self.stream_id ^ _splitmix64(index & _MASK64)) & _MASK64)
        return RngStream(self.seed, mixed)

    # Thin draws over the wrapped generator.
    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def child_generator_pool(stream: RngStream):
    """Sequential fast path over `stream.child(i).generator`.

    Returns `fetch(index) -> Generator` that re-keys one shared Philox
    instead of constructing a fresh object per child; draws are
    bit-identical to the plain child route.  Finish drawing from one index
    before fetching the next: the generator object is reused.
    """
    bg = np.random.Philox(seed=0)
    gen = np.random.Generator(bg)
    key = _PHILOX_TEMPLATE["state"]["key"]
    base_seed = stream.seed
    base_id = stream.stream_id

    def fetch(index: int) -> np.random.Generator:
        key[0] = base_seed
        key[1] = _splitmix64((base_id ^ _splitmix64(index & _MASK64)) & _MASK64)
        bg.state = _PHILOX_TEMPLATE
        return gen

    return fetch


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax; safe for entries up to +-1e3 and beyond."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax: logits must be finite")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    """log(softmax(logits)) computed without leaving log space."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("log_softmax: logits must be finite")
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def logsumexp(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    m = np.max(v)
    return float(m + np.log(np.sum(np.exp(v - m))))


def cross_entropy(probs, label: int) -> float:
    """-log(probs[label] + floor), clipped at 0 so a perfect prediction is 0."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[-1]:
        raise ValueError(f"cross_entropy: label {label} out of range [0, {p.shape[-1]})")
    return float(max(0.0, -np.log(p[label] + LOSS_FLOOR)))


def _race_draw(w: np.ndarray, count: int, rng: RngStream) -> np.ndarray:
    """Exponential-race core of weighted sampling; trusts its inputs."""
    u = rng.random(w.shape[0])
    # Zero or subnormal weights give inf keys: never drawn, exactly right.
    with np.errstate(divide="ignore", over="ignore"):
        keys = -np.log(u) / w
    picked = np.argpartition(keys, count - 1)[:count]
    return picked[np.argsort(keys[picked], kind="stable")].astype(np.int64)


def sample_without_replacement(weights, count: int, rng: RngStream) -> np.ndarray:
    """Draw `count` distinct indices with probability proportional to weight.

    Uses exponential-race keys (equivalent to successive draws with
    renormalization): index i gets key Exp(1)/w_i and the smallest `count`
    keys win, in key order.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("sample_without_replacement: weights must be 1-D")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample_without_replacement: weights must be finite and >= 0")
    positive = int(np.count_nonzero(w > 0))
    if positive == 0:
        raise ValueError("sample_without_replacement: all weights are zero")
    if count > positive:
        raise ValueError(
            f"sample_without_replacement: count {count} exceeds {positive} positive weights"
        )
    if count == 0:
        return np.empty(0, dtype=np.int64)
    return _race_draw(w, count, rng)


def median_of(values) -> float:
    """Exact middle order statistic; even length takes the midpoint of the two."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("median_of: empty input")
    return float(np.median(v))


def truncated_normal(mean, stdev, low, high, rng: RngStream, size=None):
    """Sample the normal(mean, stdev) restricted to [low, high].

    Inverse-CDF sampling (scipy truncnorm.ppf on this stream's uniforms), so
    far-truncated intervals terminate where naive rejection would not.
    stdev == 0 degenerates to a point mass clipped into the interval.
    """
    if not low < high:
        raise ValueError(f"truncated_normal: need low < high, got [{low}, {high}]")
    if stdev < 0:
        raise ValueError("truncated_normal: stdev must be >= 0")
    if stdev == 0:
        value = min(max(mean, low), high)
        if size is None:
            return float(value)
        return np.full(size, value, dtype=np.float64)
    a = (low - mean) / stdev
    b = (high - mean) / stdev
    u = rng.random(size)
    x = stats.truncnorm.ppf(u, a, b, loc=mean, scale=stdev)
    x = np.clip(x, low, high)
    if size is None:
        return float(x)
    return x
