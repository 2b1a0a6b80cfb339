"""Universal codebook construction and the two classic baselines.

The universal codebook is drawn from a Gaussian kernel density estimate fitted
on an equal number of weight sub-vectors from each source network. The
baselines are a symmetric per-tensor uniform quantizer and per-layer k-means
vector quantization.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError, SamplingError, ShapeError

DEFAULT_BANDWIDTH = 0.01
# (k, d) for 3 / 2 / 1 / 0.5 bits per weight
CODEBOOK_MENU = {3.0: (2**12, 4), 2.0: (2**16, 8), 1.0: (2**16, 16), 0.5: (2**16, 32)}


def fp32_round(a):
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


@dataclass(frozen=True)
class SubVectorPool:
    d: int
    vectors: np.ndarray  # (N, d)
    provenance: np.ndarray  # (N,) index into ``sources``
    sources: tuple = ()

    def __len__(self):
        return len(self.vectors)

    def counts(self):
        return {s: int(np.sum(self.provenance == i)) for i, s in enumerate(self.sources)}


@dataclass(frozen=True)
class KdeModel:
    samples: SubVectorPool
    bandwidth: float = DEFAULT_BANDWIDTH

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ParameterError(f"bandwidth must be positive, got {self.bandwidth}")

    def density(self, w):
        return kde_density(self, w)


@dataclass(frozen=True)
class UniversalCodebook:
    codewords: np.ndarray = field(repr=False)  # (k, d), read-only
    sources: tuple = ()
    bandwidth: float = DEFAULT_BANDWIDTH
    seed: int = 0

    def __post_init__(self):
        cw = np.array(self.codewords, dtype=np.float64)
        if cw.ndim != 2 or cw.shape[0] < 1:
            raise ShapeError(f"codewords must be (k, d), got {cw.shape}")
        if not np.all(np.isfinite(cw)):
            raise ParameterError("codewords must be finite")
        cw.flags.writeable = False
        object.__setattr__(self, "codewords", cw)

    @property
    def k(self):
        return self.codewords.shape[0]

    @property
    def d(self):
        return self.codewords.shape[1]

    @property
    def frozen(self):
        return True

    def at_storage_precision(self):
        """Copy with codewords rounded to the 32-bit floats they are stored as."""
        return UniversalCodebook(fp32_round(self.codewords), self.sources, self.bandwidth, self.seed)


@dataclass(frozen=True)
class UniformQuantizer:
    bits: int
    scale: float

    @property
    def qmax(self):
        return 1 if self.bits == 1 else 2 ** (self.bits - 1) - 1


# ---------------------------------------------------------------------------
# sub-vector pooling

def layer_subvectors(w, d):
    """Rows of ``w`` cut into length-``d`` sub-vectors, dropping any padded tail."""
    o, i = w.shape
    full = i // d
    return w[:, :full * d].reshape(o * full, d)


def net_subvectors(net, d, layers=None):
    """All complete sub-vectors of ``net``'s quantized layers (input layer excluded)."""
    if layers is None:
        layers = net.compressible_layers()[1:]
    parts = [layer_subvectors(net.weight_matrix(i), d) for i in layers]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, d))


def pool_subvectors(nets, d, quota_per_net, seed=0):
    """Draw ``quota_per_net`` sub-vectors uniformly without replacement from each net."""
    rng = np.random.default_rng(seed)
    vecs, prov = [], []
    for j, net in enumerate(nets):
        available = net_subvectors(net, d)
        if quota_per_net > len(available):
            raise SamplingError(
                f"{net.name}: quota {quota_per_net} exceeds its {len(available)} sub-vectors at d={d}")
        pick = rng.choice(len(available), size=quota_per_net, replace=False)
        vecs.append(available[np.sort(pick)])
        prov.append(np.full(quota_per_net, j))
    return SubVectorPool(d, np.concatenate(vecs), np.concatenate(prov), tuple(n.name for n in nets))


def default_quota(nets, k, d):
    """``10*k*d`` sub-vectors per net, capped by the smallest net's supply."""
    return min([10 * k * d] + [len(net_subvectors(n, d)) for n in nets])


# ---------------------------------------------------------------------------
# KDE

def kde_density(model, w):
    """Product-Gaussian KDE evaluated at one d-vector (or a batch of them)."""
    pts = model.samples.vectors
    w = np.asarray(w, dtype=np.float64)
    single = w.ndim == 1
    w = np.atleast_2d(w)
    if w.shape[1] != pts.shape[1]:
        raise ShapeError(f"query has dim {w.shape[1]}, KDE has dim {pts.shape[1]}")
    h = model.bandwidth
    d = pts.shape[1]
    u2 = np.sum(((w[:, None, :] - pts[None, :, :]) / h) ** 2, axis=2)
    dens = np.exp(-0.5 * u2).sum(axis=1) / (len(pts) * h**d * (2 * np.pi) ** (d / 2))
    return float(dens[0]) if single else dens


def sample_codebook(model, k, d=None, seed=0):
    """Draw ``k`` codewords i.i.d. from the KDE: a random pool vector plus N(0, h^2 I)."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    pts = model.samples.vectors
    if d is not None and d != pts.shape[1]:
        raise ShapeError(f"pool dim {pts.shape[1]} != requested d {d}")
    rng = np.random.default_rng(seed)
    centers = pts[rng.integers(0, len(pts), size=k)]
    cw = centers + rng.normal(0.0, model.bandwidth, size=centers.shape)
    return UniversalCodebook(cw, model.samples.sources, model.bandwidth, seed)


def fit_universal_codebook(nets, k, d, bandwidth=DEFAULT_BANDWIDTH, quota=None, seed=0):
    """Pool sub-vectors from ``nets``, fit the KDE and sample ``k`` codewords; records ``seed``."""
    quota = default_quota(nets, k, d) if quota is None else quota
    pool = pool_subvectors(nets, d, quota, seed)
    cb = sample_codebook(KdeModel(pool, bandwidth), k, d, seed + 1)
    return replace(cb, seed=seed)


# ---------------------------------------------------------------------------
# nearest-codeword search

def pairwise_sqdist(x, c, chunk_elems=2**22):
    """Exact squared distances (rows of x vs rows of c) computed by differences."""
    x = np.atleast_2d(x)
    out = np.empty((len(x), len(c)))
    step = max(1, chunk_elems // max(1, c.size))
    for s in range(0, len(x), step):
        diff = x[s:s + step, None, :] - c[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def nearest_codeword(x, c):
    """Index of the closest codeword per row; ties go to the lower index."""
    x = np.atleast_2d(x)
    idx = np.empty(len(x), dtype=np.int64)
    step = max(1, 2**22 // max(1, c.size))
    for s in range(0, len(x), step):
        idx[s:s + step] = pairwise_sqdist(x[s:s + step], c).argmin(axis=1)
    return idx


# ---------------------------------------------------------------------------
# per-layer k-means baseline

@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    sse: float
    history: list  # SSE after each assignment step


def _kmeanspp(x, k, rng):
    centroids = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        j = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centroids.append(x[j])
        d2 = np.minimum(d2, np.sum((x - x[j]) ** 2, axis=1))
    return np.array(centroids)


def lloyd(x, init, iters=100):
    """Lloyd iterations from fixed initial centroids with farthest-point repair."""
    c = np.array(init, dtype=np.float64)
    k = len(c)
    history = []
    labels = None
    for _ in range(iters):
        dist = pairwise_sqdist(x, c)
        new_labels = dist.argmin(axis=1)
        point_d = dist[np.arange(len(x)), new_labels]
        history.append(float(point_d.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # never empty a singleton cluster while repairing another
            far = int(np.argmax(np.where(counts[labels] > 1, point_d, -1.0)))
            c[j] = x[far]
            labels[far] = j
            point_d[far] = 0.0
            counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(c)
        np.add.at(sums, labels, x)
        c = sums / counts[:, None]
    sse = float(pairwise_sqdist(x, c).min(axis=1).sum())
    return KMeansResult(c, pairwise_sqdist(x, c).argmin(axis=1), sse, history)


def kmeans_codebook(vectors, k, iters=100, seed=0, n_init=50):
    """k-means++ seeded Lloyd's algorithm; best of ``n_init`` restarts by SSE."""
    x = vectors.vectors if isinstance(vectors, SubVectorPool) else np.asarray(vectors, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if not 1 <= k <= len(x):
        raise ParameterError(f"k={k} must lie in [1, {len(x)}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = lloyd(x, _kmeanspp(x, k, rng), iters)
        if best is None or res.sse < best.sse:
            best = res
    return best


# ---------------------------------------------------------------------------
# uniform quantization baseline

def uniform_quantize(w, bits):
    """Symmetric per-tensor quantizer; 1 bit falls back to a sign quantizer."""
    if not 1 <= bits <= 8:
        raise ParameterError(f"bit-width must be in 1..8, got {bits}")
    w = np.asarray(w, dtype=np.float64)
    if not np.any(w):
        return np.zeros_like(w), UniformQuantizer(bits, 1.0)
    if bits == 1:
        scale = float(np.mean(np.abs(w)))
        w_int = np.where(w >= 0, 1.0, -1.0)
    else:
        qmax = 2 ** (bits - 1) - 1
        scale = float(np.max(np.abs(w)) / qmax)
        w_int = np.clip(np.round(w / scale), -qmax, qmax)
    return scale * w_int, UniformQuantizer(bits, scale)
