"""Sub-vector decomposition and differentiable candidate assignments.

Each compressible weight matrix ``W`` (o x i) is cut into ``o * ceil(i/d)``
sub-vectors. Every sub-vector keeps the ``n`` nearest codewords as
candidates; a softmax over per-candidate logits gives the mixing ratios used
for the soft (weighted-average) reconstruction. Freezing a sub-vector pins
its ratios to an exact one-hot vector.
"""
from dataclasses import dataclass, field

import numpy as np

from .codebook import pairwise_sqdist
from .errors import ParameterError, ShapeError

DIST_FLOOR = 1e-12
DEFAULT_CANDIDATES = 64
INIT_MODES = ("euclidean+init", "euclidean", "cosine", "random")


def decompose(w, d):
    """Return ``(grid, pad_mask)``: grid is (o, ceil(i/d), d), pad_mask marks padded slots."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"expected a 2-D weight matrix, got shape {w.shape}")
    o, i = w.shape
    cols = -(-i // d)
    padded = np.zeros((o, cols * d))
    padded[:, :i] = w
    mask = np.zeros(cols * d, dtype=bool)
    mask[i:] = True
    return padded.reshape(o, cols, d), mask.reshape(cols, d)


def reassemble(grid, i):
    o, cols, d = grid.shape
    return grid.reshape(o, cols * d)[:, :i].copy()


def _topn(dist, n):
    # stable sort keeps lower codeword index first on ties
    return np.argsort(dist, axis=1, kind="stable")[:, :n]


def find_candidates(sv, codewords, n):
    """Indices of the ``n`` closest codewords, nearest first (ties to lower index)."""
    codewords = getattr(codewords, "codewords", codewords)
    if not 1 <= n <= len(codewords):
        raise ParameterError(f"n={n} must lie in [1, k={len(codewords)}]")
    sv = np.asarray(sv, dtype=np.float64)
    single = sv.ndim == 1
    idx = _topn(pairwise_sqdist(np.atleast_2d(sv), codewords), n)
    return idx[0] if single else idx


def candidate_search(svs, codewords, n, chunk=None):
    """Batched :func:`find_candidates` returning (indices, squared distances)."""
    k, d = codewords.shape
    if not 1 <= n <= k:
        raise ParameterError(f"n={n} must lie in [1, k={k}]")
    chunk = chunk or max(1, 2**21 // (k * d))
    idx = np.empty((len(svs), n), dtype=np.int64)
    d2 = np.empty((len(svs), n))
    for s in range(0, len(svs), chunk):
        dist = pairwise_sqdist(svs[s:s + chunk], codewords)
        top = _topn(dist, n)
        idx[s:s + chunk] = top
        d2[s:s + chunk] = np.take_along_axis(dist, top, axis=1)
    return idx, d2


def init_logits(sv, codewords, candidates):
    """Logits whose softmax is proportional to inverse squared distance.

    The farthest candidate (last in ascending order) gets logit 0.
    """
    codewords = getattr(codewords, "codewords", codewords)
    sv = np.atleast_2d(np.asarray(sv, dtype=np.float64))
    cand = np.atleast_2d(candidates)
    diff = sv[:, None, :] - codewords[cand]
    d2 = np.einsum("snd,snd->sn", diff, diff)
    z = logits_from_sqdist(d2)
    return z[0] if np.ndim(candidates) == 1 else z


def logits_from_sqdist(d2):
    d2 = np.maximum(d2, DIST_FLOOR)
    return np.log(d2[:, -1:]) - np.log(d2)


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LayerAssignment:
    """Candidate assignments of one compressible layer.

    ``frozen[s]`` is the winning candidate slot of sub-vector ``s`` or -1.
    """

    layer: int
    d: int
    rows: int
    cols: int  # original input extent i
    candidates: np.ndarray  # (S, n) int64, ascending distance
    logits: np.ndarray  # (S, n)
    codebook: np.ndarray = field(repr=False)  # (k, d) shared, never written
    codebook_id: str = "universal"
    frozen: np.ndarray = None
    weight_shape: tuple = None

    def __post_init__(self):
        if self.frozen is None:
            self.frozen = np.full(len(self.candidates), -1, dtype=np.int64)
        if self.weight_shape is None:
            self.weight_shape = (self.rows, self.cols)

    @property
    def n(self):
        return self.candidates.shape[1]

    @property
    def k(self):
        return self.codebook.shape[0]

    @property
    def grid_cols(self):
        return -(-self.cols // self.d)

    @property
    def num_subvectors(self):
        return len(self.candidates)

    @property
    def unfrozen(self):
        return self.frozen < 0

    def pad_mask(self):
        return decompose(np.zeros((1, self.cols)), self.d)[1]

    def candidate_codewords(self):
        return self.codebook[self.candidates]  # (S, n, d)

    def hard_slots(self):
        """Winning slot per sub-vector: the frozen slot, else the argmax ratio."""
        return np.argmax(ratios(self), axis=1)

    def hard_indices(self):
        return np.take_along_axis(self.candidates, self.hard_slots()[:, None], axis=1)[:, 0]


def build_assignment(layer, w, codebook, n, codebook_id="universal", init="euclidean+init",
                     rng=None, weight_shape=None):
    """Create a :class:`LayerAssignment` for weight matrix ``w`` (o x i)."""
    codewords = getattr(codebook, "codewords", codebook)
    k, d = codewords.shape
    if not 1 <= n <= k:
        raise ParameterError(f"candidate count n={n} must lie in [1, k={k}]")
    grid, _ = decompose(w, d)
    o, cols, _ = grid.shape
    svs = grid.reshape(o * cols, d)
    if init in ("euclidean+init", "euclidean"):
        cand, d2 = candidate_search(svs, codewords, n)
        z = logits_from_sqdist(d2) if init == "euclidean+init" else np.zeros((len(svs), n))
    elif init == "cosine":
        cn = codewords / np.maximum(np.linalg.norm(codewords, axis=1, keepdims=True), DIST_FLOOR)
        sn = svs / np.maximum(np.linalg.norm(svs, axis=1, keepdims=True), DIST_FLOOR)
        cand = np.argsort(-(sn @ cn.T), axis=1, kind="stable")[:, :n]
        z = np.zeros((len(svs), n))
    elif init == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        cand = np.stack([rng.choice(k, size=n, replace=False) for _ in range(len(svs))])
        z = np.zeros((len(svs), n))
    else:
        raise ParameterError(f"unknown init mode {init!r}; choose from {INIT_MODES}")
    return LayerAssignment(layer, d, o, w.shape[1], cand.astype(np.int64), z, codewords,
                           codebook_id, weight_shape=weight_shape)


def ratios(la):
    """Softmax ratios per sub-vector; frozen sub-vectors are exactly one-hot."""
    r = softmax(la.logits)
    fz = la.frozen >= 0
    if fz.any():
        r[fz] = 0.0
        r[np.flatnonzero(fz), la.frozen[fz]] = 1.0
    return r


def _to_matrix(la, svs):
    return reassemble(svs.reshape(la.rows, la.grid_cols, la.d), la.cols)


def reconstruct_soft(la, r=None):
    """Weighted average of candidate codewords, returned as the o x i matrix."""
    r = ratios(la) if r is None else r
    svs = np.einsum("sn,snd->sd", r, la.candidate_codewords())
    return _to_matrix(la, svs)


def reconstruct_hard(la):
    """Single-codeword reconstruction at the winning candidate."""
    return _to_matrix(la, la.codebook[la.hard_indices()])


def decode_indices(codebook, indices, rows, cols):
    """Hard matrix from raw assignment indices (used by the storage decoder)."""
    d = codebook.shape[1]
    grid_cols = -(-cols // d)
    return reassemble(codebook[indices].reshape(rows, grid_cols, d), cols)
