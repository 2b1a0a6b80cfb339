"""Binary formats, bit-packed assignment streams and compression accounting.

All multi-byte fields are little-endian; tensors and codewords are written as
32-bit floats. Every file ends with a CRC-32 of the preceding bytes.

Weight bundle (``UVQW``)::

    magic[4] version:u16 spec_len:u32 spec_json  n_tensors:u32 tensor*  crc:u32
    tensor := name_len:u16 name ndim:u8 dims:u32*ndim data:f32*prod(dims)

Codebook (``UVQK``)::

    magic[4] version:u16 meta_len:u32 meta_json k:u32 d:u32 data:f32*(k*d)  crc:u32

Compressed model (``UVQC``)::

    magic[4] version:u16 header_len:u32 header_json
    sha256[32] embedded:u8 [k:u32 d:u32 data:f32*(k*d)]
    n_layer_books:u32 (id_len:u16 id k:u32 d:u32 data:f32*(k*d))*
    streams (one per compressed layer, byte sizes in the header)
    n_tensors:u32 tensor*  crc:u32
"""
import hashlib
import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .assignment import decode_indices
from .codebook import UniversalCodebook
from .errors import DecodeError, EncodingError
from .nn.net import TinyNet

VERSION = 1
MAGIC_BUNDLE = b"UVQW"
MAGIC_CODEBOOK = b"UVQK"
MAGIC_COMPRESSED = b"UVQC"


# ---------------------------------------------------------------------------
# bit packing

def index_bits(k):
    """Bits per index: log2(k) for powers of two, ceil(log2 k) otherwise."""
    if k < 1:
        raise EncodingError(f"k must be >= 1, got {k}")
    return (k - 1).bit_length()


def pack_assignments(indices, k):
    """Pack indices LSB-first at ``index_bits(k)`` bits each."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise EncodingError(f"indices must lie in [0, {k})")
    b = index_bits(k)
    if idx.size == 0 or b == 0:
        return b""
    bits = (idx[:, None] >> np.arange(b)) & 1
    return np.packbits(bits.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_assignments(data, count, k):
    b = index_bits(k)
    if b == 0:
        return np.zeros(count, dtype=np.int64)
    need = -(-count * b // 8)
    if len(data) < need:
        raise DecodeError(f"stream holds {len(data)} bytes, {need} needed")
    bits = np.unpackbits(np.frombuffer(bytes(data[:need]), dtype=np.uint8), bitorder="little")
    bits = bits[:count * b].reshape(count, b).astype(np.int64)
    idx = bits @ (1 << np.arange(b, dtype=np.int64))
    if idx.size and idx.max() >= k:
        raise DecodeError(f"decoded index {int(idx.max())} >= k={k}")
    return idx


def stream_nbytes(count, k):
    return -(-count * index_bits(k) // 8)


# ---------------------------------------------------------------------------
# low-level reader / writer

class _Reader:
    def __init__(self, data, magic):
        data = bytes(data)
        if len(data) < 10:
            raise DecodeError("file truncated")
        body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
        if zlib.crc32(body) != crc:
            raise DecodeError("checksum mismatch (truncated or corrupted file)")
        self.buf = body
        self.pos = 0
        if self.take(4) != magic:
            raise DecodeError(f"bad magic, expected {magic!r}")
        version = self.unpack("<H")[0]
        if version != VERSION:
            raise DecodeError(f"unsupported version {version}")

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise DecodeError("file truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def json(self):
        (n,) = self.unpack("<I")
        return json.loads(self.take(n).decode("utf-8"))

    def f32(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)

    def tensor(self):
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode("utf-8")
        (ndim,) = self.unpack("<B")
        dims = self.unpack(f"<{ndim}I") if ndim else ()
        return name, self.f32(int(np.prod(dims, dtype=np.int64))).reshape(dims)

    def done(self):
        if self.pos != len(self.buf):
            raise DecodeError("trailing bytes")


def _json_bytes(obj):
    raw = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _f32_bytes(a):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise EncodingError("tensors must be finite")
    return a.astype("<f4").tobytes()


def _tensor_bytes(name, a):
    a = np.asarray(a)
    raw = name.encode("utf-8")
    return (struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim)
            + struct.pack(f"<{a.ndim}I", *a.shape) + _f32_bytes(a))


def _finish(parts):
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


# ---------------------------------------------------------------------------
# weight bundles

def encode_bundle(net):
    tensors = net.state()
    parts = [MAGIC_BUNDLE, struct.pack("<H", VERSION), _json_bytes(net.spec()),
             struct.pack("<I", len(tensors))]
    parts += [_tensor_bytes(k, v) for k, v in tensors.items()]
    return _finish(parts)


def decode_bundle(data):
    r = _Reader(data, MAGIC_BUNDLE)
    net = TinyNet.from_spec(r.json())
    (count,) = r.unpack("<I")
    net.load_state(dict(r.tensor() for _ in range(count)))
    r.done()
    return net


# ---------------------------------------------------------------------------
# codebooks

def codebook_bytes(codewords):
    return _f32_bytes(codewords)


def codebook_digest(codewords):
    return hashlib.sha256(codebook_bytes(codewords)).digest()


def encode_codebook(cb):
    meta = {"sources": list(cb.sources), "bandwidth": cb.bandwidth, "seed": cb.seed}
    return _finish([MAGIC_CODEBOOK, struct.pack("<H", VERSION), _json_bytes(meta),
                    struct.pack("<II", cb.k, cb.d), codebook_bytes(cb.codewords)])


def decode_codebook(data):
    r = _Reader(data, MAGIC_CODEBOOK)
    meta = r.json()
    k, d = r.unpack("<II")
    cw = r.f32(k * d).reshape(k, d)
    r.done()
    return UniversalCodebook(cw, tuple(meta["sources"]), meta["bandwidth"], meta["seed"])


# ---------------------------------------------------------------------------
# compressed models

@dataclass
class CompressedLayer:
    layer: int
    codebook_id: str  # "universal" or a per-layer codebook id
    k: int
    d: int
    rows: int
    cols: int
    weight_shape: tuple
    indices: np.ndarray

    def header(self):
        return {"layer": self.layer, "codebook": self.codebook_id, "k": self.k, "d": self.d,
                "rows": self.rows, "cols": self.cols, "weight_shape": list(self.weight_shape),
                "count": int(len(self.indices)), "nbytes": stream_nbytes(len(self.indices), self.k)}


@dataclass
class CompressedModel:
    topology: dict
    codebook: UniversalCodebook  # universal codebook (at storage precision) or None
    layers: list
    residuals: dict  # name -> array, every tensor not covered by assignments
    layer_codebooks: dict = field(default_factory=dict)  # id -> (k, d) array
    meta: dict = field(default_factory=dict)

    def codebook_for(self, cl):
        if cl.codebook_id == "universal":
            if self.codebook is None:
                raise DecodeError("universal codebook not available")
            return self.codebook.codewords
        return self.layer_codebooks[cl.codebook_id]


def from_assignments(net, assignments, codebook, meta=None):
    """Freeze a fully hard set of assignments into a :class:`CompressedModel`."""
    layers, books = [], {}
    covered = set()
    for la in sorted(assignments, key=lambda a: a.layer):
        if la.codebook_id != "universal":
            books[la.codebook_id] = np.array(la.codebook)
        layers.append(CompressedLayer(la.layer, la.codebook_id, la.k, la.d, la.rows, la.cols,
                                      tuple(la.weight_shape), la.hard_indices()))
        covered.add(f"{la.layer}.weight")
    residuals = {k: v.copy() for k, v in net.state().items() if k not in covered}
    return CompressedModel(net.spec(), codebook, layers, residuals, books, dict(meta or {}))


def encode_compressed(model, embed_codebook=True):
    cb = model.codebook
    header = {"topology": model.topology, "layers": [cl.header() for cl in model.layers],
              "meta": model.meta}
    parts = [MAGIC_COMPRESSED, struct.pack("<H", VERSION), _json_bytes(header)]
    if cb is None:
        parts += [bytes(32), struct.pack("<B", 0)]
    else:
        parts += [codebook_digest(cb.codewords), struct.pack("<B", 1 if embed_codebook else 0)]
        if embed_codebook:
            parts += [struct.pack("<II", cb.k, cb.d), codebook_bytes(cb.codewords)]
    parts.append(struct.pack("<I", len(model.layer_codebooks)))
    for bid, book in model.layer_codebooks.items():
        raw = bid.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<II", *book.shape), codebook_bytes(book)]
    for cl in model.layers:
        parts.append(pack_assignments(cl.indices, cl.k))
    parts.append(struct.pack("<I", len(model.residuals)))
    parts += [_tensor_bytes(k, v) for k, v in model.residuals.items()]
    return _finish(parts)


def decode_compressed(data, codebook=None):
    """Parse a ``UVQC`` file; ``codebook`` supplies a referenced (non-embedded) codebook."""
    r = _Reader(data, MAGIC_COMPRESSED)
    header = r.json()
    digest = r.take(32)
    (embedded,) = r.unpack("<B")
    cb = None
    if embedded:
        k, d = r.unpack("<II")
        cb = UniversalCodebook(r.f32(k * d).reshape(k, d))
    elif any(l["codebook"] == "universal" for l in header["layers"]):
        if codebook is None:
            raise DecodeError("model references an external universal codebook; none supplied")
        cb = codebook
    if cb is not None and codebook_digest(cb.codewords) != digest:
        raise DecodeError("universal codebook digest mismatch")
    books = {}
    (nbooks,) = r.unpack("<I")
    for _ in range(nbooks):
        (n,) = r.unpack("<H")
        bid = r.take(n).decode("utf-8")
        k, d = r.unpack("<II")
        books[bid] = r.f32(k * d).reshape(k, d)
    layers = []
    for h in header["layers"]:
        idx = unpack_assignments(r.take(h["nbytes"]), h["count"], h["k"])
        layers.append(CompressedLayer(h["layer"], h["codebook"], h["k"], h["d"], h["rows"],
                                      h["cols"], tuple(h["weight_shape"]), idx))
    (count,) = r.unpack("<I")
    residuals = dict(r.tensor() for _ in range(count))
    r.done()
    return CompressedModel(header["topology"], cb, layers, residuals, books, header["meta"])


def decode_model(model):
    """Rebuild the hard-weight :class:`TinyNet` described by ``model``."""
    net = TinyNet.from_spec(model.topology)
    for cl in model.layers:
        book = model.codebook_for(cl)
        if len(book) != cl.k:
            raise DecodeError(f"layer {cl.layer}: codebook has {len(book)} entries, header says {cl.k}")
        if cl.indices.size and cl.indices.max() >= cl.k:
            raise DecodeError(f"layer {cl.layer}: index out of range")
        net.set_weight_matrix(cl.layer, decode_indices(book, cl.indices, cl.rows, cl.cols))
    net.load_state(model.residuals)
    return net


def decode_and_run(model, x):
    if isinstance(model, (bytes, bytearray)):
        model = decode_compressed(model)
    return decode_model(model).predict(x)


def hard_weight_mse(model, reference_net):
    """Mean squared error between decoded and reference weights over compressed layers."""
    net = decode_model(model)
    num, den = 0.0, 0
    for cl in model.layers:
        diff = net.weight_matrix(cl.layer) - reference_net.weight_matrix(cl.layer)
        num += float(np.sum(diff * diff))
        den += diff.size
    return num / den if den else 0.0


# ---------------------------------------------------------------------------
# accounting

@dataclass
class CompressionReport:
    network: str
    compressed_weights: int
    raw_values: int
    assignment_bits: int
    layer_codebook_bits: int
    universal_codebook_bits: int
    bits_per_weight: float
    ratio_weights_only: float
    ratio_amortized: float
    ratio_total: float
    codebook_bytes: int
    codebook_loads: int
    sharing: str
    mse: float = None

    @property
    def ratio_rounded(self):
        return int(math.floor(self.ratio_weights_only + 0.5))

    def row(self):
        out = dict(self.__dict__)
        out["ratio_rounded"] = self.ratio_rounded
        return out


def vq_ratio(k, d):
    """Weight-only compression ratio of a VQ layer: 32*d / log2(k)."""
    return 32.0 * d / index_bits(k)


def account(model, sharing="universal", layer_count_across_tasks=None, networks_sharing=1,
            reference_net=None):
    """Storage and codebook-I/O figures for ``model``.

    Universal sharing loads its single codebook once for every resident network;
    per-layer sharing loads one codebook per compressed layer across all resident
    networks (``layer_count_across_tasks``, default: this model's layer count).
    """
    if sharing not in ("universal", "per-layer"):
        raise ValueError(f"sharing must be 'universal' or 'per-layer', got {sharing!r}")
    compressed = sum(cl.rows * cl.cols for cl in model.layers)
    assign_bits = sum(len(cl.indices) * index_bits(cl.k) for cl in model.layers)
    raw = sum(int(np.size(v)) for v in model.residuals.values())
    layer_bits = sum(32 * b.size for b in model.layer_codebooks.values())
    uses_universal = any(cl.codebook_id == "universal" for cl in model.layers)
    uni_bits = 32 * model.codebook.codewords.size if (uses_universal and model.codebook is not None) else 0
    if sharing == "universal":
        loads = 1
        cb_cost = uni_bits / networks_sharing + layer_bits
    else:
        loads = layer_count_across_tasks if layer_count_across_tasks is not None else len(model.layers)
        cb_cost = uni_bits + layer_bits
    w_only = 32.0 * compressed / assign_bits if assign_bits else float("inf")
    amort = 32.0 * compressed / (assign_bits + cb_cost) if assign_bits + cb_cost else float("inf")
    total = 32.0 * (compressed + raw) / (assign_bits + cb_cost + 32 * raw)
    mse = hard_weight_mse(model, reference_net) if reference_net is not None else None
    return CompressionReport(
        network=model.topology.get("name", ""), compressed_weights=compressed, raw_values=raw,
        assignment_bits=assign_bits, layer_codebook_bits=layer_bits, universal_codebook_bits=uni_bits,
        bits_per_weight=assign_bits / compressed if compressed else 0.0,
        ratio_weights_only=w_only, ratio_amortized=amort, ratio_total=total,
        codebook_bytes=(uni_bits + layer_bits) // 8, codebook_loads=loads, sharing=sharing, mse=mse)
