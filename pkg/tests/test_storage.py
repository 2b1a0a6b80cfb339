import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvq import pnc, storage
from uvq.assignment import build_assignment
from uvq.codebook import UniversalCodebook
from uvq.errors import DecodeError, EncodingError
from uvq.nn import build_net, zoo


def naive_pack(indices, bits):
    """Reference bit writer: one bit at a time, LSB-first within each byte."""
    out = bytearray(math.ceil(len(indices) * bits / 8))
    pos = 0
    for v in indices:
        for b in range(bits):
            if (v >> b) & 1:
                out[pos // 8] |= 1 << (pos % 8)
            pos += 1
    return bytes(out)


def test_pack_example():
    assert storage.pack_assignments([1, 2, 3], 16) == bytes([0x21, 0x03])


def test_pack_empty():
    assert storage.pack_assignments([], 256) == b""
    assert storage.unpack_assignments(b"", 0, 256).tolist() == []


def test_pack_rejects_out_of_range():
    with pytest.raises(EncodingError):
        storage.pack_assignments([16], 16)
    with pytest.raises(EncodingError):
        storage.pack_assignments([-1], 16)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16).flatmap(
    lambda b: st.tuples(st.just(2**b), st.lists(st.integers(0, 2**b - 1), max_size=60))))
def test_pack_matches_naive_writer_and_roundtrips(case):
    k, idx = case
    bits = int(math.log2(k))
    packed = storage.pack_assignments(idx, k)
    assert packed == naive_pack(idx, bits)
    assert len(packed) == storage.stream_nbytes(len(idx), k) == math.ceil(len(idx) * bits / 8)
    assert storage.unpack_assignments(packed, len(idx), k).tolist() == idx


@settings(max_examples=50, deadline=None)
@given(k=st.integers(3, 1000), data=st.data())
def test_non_power_of_two_k(k, data):
    idx = data.draw(st.lists(st.integers(0, k - 1), max_size=30))
    assert storage.index_bits(k) == math.ceil(math.log2(k))
    packed = storage.pack_assignments(idx, k)
    assert storage.unpack_assignments(packed, len(idx), k).tolist() == idx


def test_unpack_rejects_corruption():
    with pytest.raises(DecodeError):
        storage.unpack_assignments(bytes([0xFF]), 2, 3)  # 2-bit fields decode to 3 >= k
    with pytest.raises(DecodeError):
        storage.unpack_assignments(bytes([0x21]), 3, 16)  # stream too short


# ---------------------------------------------------------------------------
# accounting

def _synthetic_model(k, d, shapes, universal=True):
    layers = []
    for i, (o, n_in) in enumerate(shapes):
        count = o * -(-n_in // d)
        layers.append(storage.CompressedLayer(i, "universal", k, d, o, n_in, (o, n_in),
                                              np.zeros(count, dtype=np.int64)))
    cb = UniversalCodebook(np.zeros((1, d)))
    return storage.CompressedModel({"name": "synthetic"}, cb if universal else None, layers, {})


@pytest.mark.parametrize("k,d,ratio,rounded,bpw", [
    (2**12, 4, 32 * 4 / 12, 11, 3.0),
    (2**16, 8, 16.0, 16, 2.0),
    (2**16, 16, 32.0, 32, 1.0),
    (2**16, 32, 64.0, 64, 0.5),
])
def test_account_rate_column(k, d, ratio, rounded, bpw):
    rep = storage.account(_synthetic_model(k, d, [(64, 128), (32, 64)]))
    assert rep.bits_per_weight == bpw
    assert rep.ratio_weights_only == pytest.approx(ratio, rel=1e-15)
    assert rep.ratio_rounded == rounded
    assert storage.vq_ratio(k, d) == pytest.approx(ratio, rel=1e-15)


def test_ratio_two_decimals():
    assert round(storage.vq_ratio(2**12, 4), 2) == 10.67


def test_io_counts():
    model = _synthetic_model(256, 4, [(8, 8)] * 7)
    assert storage.account(model, "universal").codebook_loads == 1
    assert storage.account(model, "universal", layer_count_across_tasks=514).codebook_loads == 1
    assert storage.account(model, "per-layer", layer_count_across_tasks=514).codebook_loads == 514
    assert storage.account(model, "per-layer").codebook_loads == 7
    with pytest.raises(ValueError):
        storage.account(model, "global")


def test_account_recomputes_by_hand():
    shapes = [(16, 10), (4, 16)]
    k, d = 256, 4
    model = _synthetic_model(k, d, shapes)
    model.residuals["0.bias"] = np.zeros(16)
    rep = storage.account(model, "universal", networks_sharing=2)
    weights = 16 * 10 + 4 * 16
    bits = (16 * 3 + 4 * 4) * 8  # padded grid columns: ceil(10/4)=3, 16/4=4
    cb_bits = 32 * 1 * d / 2
    assert rep.compressed_weights == weights
    assert rep.assignment_bits == bits
    assert rep.ratio_weights_only == pytest.approx(32 * weights / bits)
    assert rep.ratio_amortized == pytest.approx(32 * weights / (bits + cb_bits))
    assert rep.ratio_total == pytest.approx(32 * (weights + 16) / (bits + cb_bits + 32 * 16))


# ---------------------------------------------------------------------------
# file formats

def _roundtrip_bundle(net):
    data = storage.encode_bundle(net)
    back = storage.decode_bundle(data)
    assert storage.encode_bundle(back) == data
    return back, data


@pytest.mark.parametrize("name", zoo.NET_NAMES)
def test_bundle_roundtrip(name):
    net = build_net(name, 3)
    net.load_state({k: np.float32(v).astype(np.float64) for k, v in net.state().items()})
    back, _ = _roundtrip_bundle(net)
    assert back.spec() == net.spec()
    for k, v in net.state().items():
        assert v.tobytes() == back.state()[k].tobytes()


def test_bundle_rejects_unknown_version():
    data = bytearray(storage.encode_bundle(build_net("mlp-2x32")))
    data[4:6] = struct.pack("<H", 99)
    body = bytes(data[:-4])
    import zlib
    data[-4:] = struct.pack("<I", zlib.crc32(body))
    with pytest.raises(DecodeError, match="version"):
        storage.decode_bundle(bytes(data))


def test_bundle_rejects_bad_magic_and_corruption():
    data = storage.encode_bundle(build_net("mlp-2x32"))
    with pytest.raises(DecodeError):
        storage.decode_codebook(data)
    flipped = bytearray(data)
    flipped[40] ^= 0x01
    with pytest.raises(DecodeError):
        storage.decode_bundle(bytes(flipped))


def test_codebook_roundtrip():
    cb = UniversalCodebook(np.float32(np.random.default_rng(0).normal(size=(32, 4))).astype(np.float64),
                           ("a", "b"), 0.01, 5)
    data = storage.encode_codebook(cb)
    back = storage.decode_codebook(data)
    assert back.codewords.tobytes() == cb.codewords.tobytes()
    assert (back.sources, back.bandwidth, back.seed) == (cb.sources, cb.bandwidth, cb.seed)
    assert storage.encode_codebook(back) == data


@pytest.fixture(scope="module")
def compressed(trained_zoo, desk_codebook):
    net, ds, _ = trained_zoo["cnn-small"]
    model, trace = pnc.compress(net, desk_codebook, ds, pnc.PncConfig(candidates=4, max_epochs=1))
    return model, trace, net, ds


def test_compressed_roundtrip_byte_identical(compressed):
    model = compressed[0]
    for embed in (True, False):
        data = storage.encode_compressed(model, embed_codebook=embed)
        back = storage.decode_compressed(data, codebook=None if embed else model.codebook)
        assert storage.encode_compressed(back, embed_codebook=embed) == data


def test_stream_lengths(compressed):
    data = storage.encode_compressed(compressed[0])
    back = storage.decode_compressed(data)
    for cl in back.layers:
        h = cl.header()
        assert h["nbytes"] == math.ceil(h["count"] * math.log2(cl.k) / 8)
        assert cl.indices.max() < cl.k


def test_decode_and_run_bit_identical(compressed):
    model, trace, _, ds = compressed
    x = ds.split("calib")[0]
    in_memory = storage.decode_model(model).predict(x)
    from_file = storage.decode_and_run(storage.encode_compressed(model), x)
    assert in_memory.tobytes() == from_file.tobytes()


def test_decoded_mse_matches_trace(compressed):
    model, trace, net, _ = compressed
    back = storage.decode_compressed(storage.encode_compressed(model))
    assert abs(storage.hard_weight_mse(back, net) - trace.final_mse) <= 1e-12


def test_truncated_file_fails_closed(compressed):
    data = storage.encode_compressed(compressed[0])
    for cut in (3, 20, len(data) // 2, len(data) - 1):
        with pytest.raises(DecodeError):
            storage.decode_compressed(data[:cut])


def test_external_codebook_checks(compressed):
    model = compressed[0]
    data = storage.encode_compressed(model, embed_codebook=False)
    with pytest.raises(DecodeError):
        storage.decode_compressed(data)
    wrong = UniversalCodebook(model.codebook.codewords + 1.0)
    with pytest.raises(DecodeError, match="digest"):
        storage.decode_compressed(data, codebook=wrong)


def test_out_of_range_index_rejected_on_decode(compressed):
    model = compressed[0]
    broken = storage.CompressedModel(model.topology, model.codebook, list(model.layers), model.residuals,
                                     model.layer_codebooks, model.meta)
    cl = broken.layers[0]
    broken.layers[0] = storage.CompressedLayer(cl.layer, cl.codebook_id, cl.k - 1, cl.d, cl.rows, cl.cols,
                                               cl.weight_shape, np.full_like(cl.indices, cl.k - 1))
    with pytest.raises(DecodeError):
        storage.decode_model(broken)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), name=st.sampled_from(zoo.NET_NAMES), logk=st.integers(1, 9))
def test_random_models_roundtrip(seed, name, logk):
    rng = np.random.default_rng(seed)
    net = build_net(name, seed % 1000)
    net.load_state({k: np.float32(v).astype(np.float64) for k, v in net.state().items()})
    d = int(rng.integers(1, 6))
    k = 2**logk
    cb = UniversalCodebook(np.float32(rng.normal(size=(k, d))).astype(np.float64))
    las = []
    for i in net.compressible_layers()[1:]:
        la = build_assignment(i, net.weight_matrix(i), cb.codewords, 1,
                              weight_shape=net.layers[i].params["weight"].shape)
        la.frozen[:] = 0
        las.append(la)
    model = storage.from_assignments(net, las, cb)
    data = storage.encode_compressed(model)
    assert storage.encode_compressed(storage.decode_compressed(data)) == data
