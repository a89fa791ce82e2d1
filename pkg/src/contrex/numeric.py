"""Dense numeric substrate: stable softmax, top-k selection, cosine distance,
cross-entropy, a central-difference gradient checker, and a counter-based RNG.

All public operations work on float64 numpy arrays and return finite values;
non-finite results raise NumericError. The RNG wraps numpy's Philox bit
generator, which is counter-based and produces identical streams for a given
seed on every platform, so golden test values are portable.
"""

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, NumericError


def as_vector(v):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise InvalidArgumentError(f"expected a 1-d vector, got shape {a.shape}")
    return a


def check_finite(a, what="array"):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains non-finite values")
    return a


def softmax(v):
    """Stable softmax of a 1-d vector (max-subtraction), summing to 1."""
    a = as_vector(v)
    if a.size == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("softmax input must be finite")
    e = np.exp(a - np.max(a))
    return e / np.sum(e)


def softmax_rows(s):
    """Row-wise stable softmax of a 2-d array."""
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(s - np.max(s, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def top_k_indices(scores, k):
    """Indices of the k smallest scores, ties broken by lowest index.

    Returned in ascending score order. Because the subset objective is a sum
    of independent per-element terms, this equals exhaustive minimization of
    the score sum over all size-k subsets.
    """
    a = as_vector(scores)
    if not 1 <= k <= a.size:
        raise InvalidArgumentError(f"k={k} out of range for {a.size} scores")
    order = np.argsort(a, kind="stable")
    return order[:k].astype(np.int64)


def cosine_distance(a, b):
    """1 - cosine similarity, clipped into [0, 2]."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine distance of a zero-norm vector")
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


def log_sum_exp(v):
    a = as_vector(v)
    m = np.max(a)
    return float(m + np.log(np.sum(np.exp(a - m))))


def cross_entropy(logits, label):
    """-log softmax(logits)[label], computed via log-sum-exp."""
    a = as_vector(logits)
    if not 0 <= label < a.size:
        raise InvalidArgumentError(f"label {label} out of range for {a.size} logits")
    return log_sum_exp(a) - float(a[label])


def finite_diff_grad(f, p, eps=1e-5):
    """Central-difference gradient of a scalar function at parameter vector p.

    This is the oracle against which every analytic gradient in the package
    is checked; it must stay independent of the reverse-mode code paths.
    """
    p = as_vector(p)
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    g = np.zeros_like(p)
    for i in range(p.size):
        step = np.zeros_like(p)
        step[i] = eps
        hi = f(p + step)
        lo = f(p - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite evaluation at coordinate {i}")
        g[i] = (hi - lo) / (2.0 * eps)
    return g


def relative_grad_error(analytic, numeric):
    """Norm-wise relative disagreement between two gradient vectors."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


class RngState:
    """Deterministic random stream keyed by a 64-bit seed.

    Backed by the Philox counter-based generator: equal seeds give
    bit-identical streams across runs and platforms. `counter` records the
    number of sampling calls made. Single-owner: never share across threads.
    """

    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def spawn(self, tag):
        """Derive an independent child stream from a string tag."""
        import zlib

        child = (self.seed * 0x9E3779B97F4A7C15 + zlib.crc32(str(tag).encode())) & 0xFFFFFFFFFFFFFFFF
        return RngState(child)

    def normal(self, size=None, scale=1.0):
        self.counter += 1
        return self._gen.standard_normal(size) * scale

    def uniform(self, low=0.0, high=1.0, size=None):
        self.counter += 1
        return self._gen.uniform(low, high, size)

    def integers(self, low, high, size=None):
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        self.counter += 1
        return self._gen.permutation(n)

    def choice_weighted(self, weights, size=None):
        """Sample component indices proportionally to a weight vector."""
        self.counter += 1
        w = as_vector(weights)
        p = w / np.sum(w)
        return self._gen.choice(w.size, size=size, p=p)

    def unit_vector(self, dim):
        """Uniform direction on the unit sphere."""
        while True:
            v = self.normal(dim)
            n = np.linalg.norm(v)
            if n > 1e-12:
                return v / n
