"""Shared numeric primitives: flat float64 vectors, covariance, seeded RNG,
and central-difference gradients.

Parameter vectors and feature matrices are plain ``numpy.float64`` arrays
(1-d and 2-d respectively); every public function validates shapes rather
than wrapping arrays in bespoke containers.
"""

import math

import numpy as np

# splitmix64 constants; the generator below is counter-based so that draw i
# depends only on (seed, i), never on platform word size or call batching.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_SEED_TAG = np.uint64(0x3C79AC492BA7B653)

_U64_MASK = (1 << 64) - 1
_INV_2_53 = float(2.0**-53)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX_A
    z ^= z >> np.uint64(27)
    z *= _MIX_B
    z ^= z >> np.uint64(31)
    return z


def derive_seed(seed: int, index: int) -> int:
    """Child seed for run `index`, decoupled from the parent draw stream."""
    base = (int(seed) ^ 0x5851F42D4C957F2D) & _U64_MASK
    z = (base + (index + 1) * 0x9E3779B97F4A7C15) & _U64_MASK
    return int(_mix64(np.uint64([z ^ int(_SEED_TAG)]))[0])


class Rng:
    """Deterministic counter-based splitmix64 stream.

    Raw draw i is mix64(seed + (i+1)*golden) over wrapping uint64
    arithmetic, so the full stream is pinned by the seed alone and is
    reproducible bit-for-bit across platforms.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64_MASK
        self._seed64 = np.uint64(self.seed)
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix64(self._seed64 + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), 53-bit resolution."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller (two uniforms per pair)."""
        m = (n + 1) // 2
        u1 = (((self._raw(m) >> np.uint64(11)) + np.uint64(1)).astype(np.float64)) * _INV_2_53
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * math.pi * u2
        out = np.concatenate([r * np.cos(ang), r * np.sin(ang)])
        return out[:n]

    def bernoulli(self, probs: np.ndarray) -> np.ndarray:
        """Boolean array, one draw per entry of probs, in entry order."""
        probs = np.asarray(probs, dtype=np.float64)
        return self.uniform(probs.size).reshape(probs.shape) < probs

    def integers(self, upper: int, n: int) -> np.ndarray:
        """n ints uniform on {0, ..., upper-1}, drawn with replacement."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        return np.minimum((self.uniform(n) * upper).astype(np.int64), upper - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n); consumes n-1 uniforms."""
        perm = np.arange(n)
        if n > 1:
            u = self.uniform(n - 1)
            for i in range(n - 1, 0, -1):
                j = min(int(u[n - 1 - i] * (i + 1)), i)
                perm[i], perm[j] = perm[j], perm[i]
        return perm

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        if k > n:
            raise ValueError("cannot draw %d distinct items from %d" % (k, n))
        return self.permutation(n)[:k]

    def sphere_direction(self, d: int) -> np.ndarray:
        """Unit vector uniform on the (d-1)-sphere."""
        z = self.normal(d)
        norm = float(np.linalg.norm(z))
        if norm == 0.0:
            z[0] = 1.0
            norm = 1.0
        return z / norm


def vec_axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """a*x + y elementwise; x and y must share a length."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("vec_axpy shape mismatch: %s vs %s" % (x.shape, y.shape))
    return a * x + y


def covariance(features: np.ndarray) -> np.ndarray:
    """Sample covariance (1/(B-1) normalization) of a B x d feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    b = features.shape[0]
    if b < 2:
        raise ValueError("covariance needs at least 2 rows, got %d" % b)
    centered = features - features.mean(axis=0)
    return centered.T @ centered / (b - 1)


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_p) - f(x - h e_p)) / (2h) per coordinate."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for p in range(x.size):
        lo = x.copy()
        hi = x.copy()
        hi[p] += h
        lo[p] -= h
        f_hi = float(f(hi))
        f_lo = float(f(lo))
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise FloatingPointError("non-finite objective value in finite_diff_grad")
        grad[p] = (f_hi - f_lo) / (2.0 * h)
    return grad


def assert_finite(arr: np.ndarray, label: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite values in %s" % label)
