import math
import struct

import numpy as np
import pytest

from enccluster import protocol as pr
from enccluster.dmcfe import scheme
from enccluster.errors import DecodeError, InvalidArgument, LabelMismatch
from enccluster.weight_clustering import cluster_weights


@pytest.fixture(scope="module")
def setup3():
    pp = scheme.setup(256, 3, rng_seed=11)
    return pp, scheme.keygen_all(pp, seed=11)


def make_round(pp, keys, d=400, kappa=8, round_=1, counts=(100, 50, 25), mode="filter", seed=0):
    rng = np.random.default_rng(seed)
    codec = pr.FixedPointCodec()
    msgs, infos, weights = [], [], []
    for k, c in zip(keys, counts):
        w = rng.normal(scale=0.3, size=d)
        m, info = pr.client_prepare_update(w, kappa, c, round_, k, codec, pr.FilterParams(),
                                           client_seed=1000 + k.client_id, mapping_mode=mode)
        msgs.append(m)
        infos.append(info)
        weights.append(w)
    seeds = {k.client_id: 1000 + k.client_id for k in keys}
    return codec, msgs, infos, seeds, weights


def test_codec_round_trip_and_saturation():
    codec = pr.FixedPointCodec(fractional_bits=16, slot_bound=1 << 20)
    ints, sat = codec.encode([0.5, -1.25, 100.0], sample_count=2)
    assert ints[:2] == [65536, -163840]
    assert ints[2] == 1 << 20 and sat == 1
    np.testing.assert_allclose(codec.decode(ints[:2], 2), [0.5, -1.25])
    assert codec.aggregate_bound(3) == 3 << 20


def test_secure_aggregate_matches_plaintext_reference(setup3):
    pp, keys = setup3
    codec, msgs, infos, seeds, _ = make_round(pp, keys)
    total = sum(m.sample_count for m in msgs)
    res = pr.secure_aggregate(msgs, pp, total, codec, seeds)
    models = [i.model for i in infos]
    counts = [m.sample_count for m in msgs]
    # mappings recovered from the filters may differ from the true ones only by collisions
    exact = [type(m)(m.centroids, res.mappings[i]) for i, m in enumerate(models)]
    np.testing.assert_array_equal(res.weights, pr.plaintext_aggregate(exact, counts, codec))
    ref = pr.plaintext_aggregate(exact, counts)
    assert np.abs(res.weights - ref).max() <= 2 * len(keys) * 2.0**-16
    # independent oracle: integer sum by hand
    manual = sum(np.asarray(i.plaintexts, dtype=np.int64)[res.mappings[k]] for k, i in enumerate(infos))
    assert np.array_equal(res.decrypted.astype(np.int64), manual)


def test_hint_does_not_change_result(setup3):
    pp, keys = setup3
    codec, msgs, infos, seeds, weights = make_round(pp, keys, d=200, seed=4)
    total = sum(m.sample_count for m in msgs)
    a = pr.secure_aggregate(msgs, pp, total, codec, seeds)
    b = pr.secure_aggregate(msgs, pp, total, codec, seeds, hint_weights=np.mean(weights, axis=0))
    assert np.array_equal(a.weights, b.weights)


def test_huffman_mode_is_exact(setup3):
    pp, keys = setup3
    codec, msgs, infos, seeds, _ = make_round(pp, keys, d=300, mode="huffman", seed=2)
    res = pr.secure_aggregate(msgs, pp, sum(m.sample_count for m in msgs), codec, {})
    for k, info in enumerate(infos):
        assert np.array_equal(res.mappings[k], info.model.mapping)
    assert res.substitute_failures == 0


def test_wrong_seed_breaks_mapping(setup3):
    pp, keys = setup3
    codec, msgs, infos, seeds, _ = make_round(pp, keys, d=300, seed=3)
    bad = dict(seeds)
    bad[0] += 1
    res = pr.secure_aggregate(msgs, pp, 175, codec, bad)
    assert res.substitute_failures > 250
    assert (res.mappings[0] == infos[0].model.mapping).mean() < 0.3


def test_round_mismatch_rejected(setup3):
    pp, keys = setup3
    codec, msgs, _, seeds, _ = make_round(pp, keys, d=50, round_=2)
    with pytest.raises(LabelMismatch):
        pr.secure_aggregate(msgs, pp, 175, codec, seeds, expected_round=3)
    other = make_round(pp, keys, d=50, round_=3)[1]
    with pytest.raises(LabelMismatch):
        pr.secure_aggregate([msgs[0], msgs[1], other[2]], pp, 175, codec, seeds)
    # ciphertext of round 3 smuggled into a round-2 message
    forged = pr.RoundMessage(msgs[2].client_id, 2, msgs[2].kappa, msgs[2].d, msgs[2].sample_count,
                             other[2].ciphertext, msgs[2].mapping, msgs[2].partial_key)
    with pytest.raises(LabelMismatch):
        pr.secure_aggregate([msgs[0], msgs[1], forged], pp, 175, codec, seeds)


def test_partial_participation_with_idle_key_shares(setup3):
    pp, keys = setup3
    codec = pr.FixedPointCodec()
    rng = np.random.default_rng(5)
    y = (1, 1, 0)
    msgs, infos = [], []
    for k in keys[:2]:
        m, info = pr.client_prepare_update(rng.normal(size=80), 4, 10, 7, k, codec, pr.FilterParams(),
                                           client_seed=k.client_id, y=y)
        msgs.append(m)
        infos.append(info)
    idle = scheme.partial_key_to_bytes(scheme.derive_partial_key(keys[2], y, 7))
    res = pr.secure_aggregate(msgs, pp, 20, codec, {0: 0, 1: 1}, extra_key_shares=[idle])
    exact = [type(i.model)(i.model.centroids, res.mappings[k]) for k, i in enumerate(infos)]
    np.testing.assert_array_equal(res.weights, pr.plaintext_aggregate(exact, [10, 10], codec))


def test_message_header_layout(setup3):
    pp, keys = setup3
    _, msgs, _, _, _ = make_round(pp, keys[:3], d=64, round_=9, counts=(5, 6, 7))
    blob = msgs[1].to_bytes()
    magic, ver, kind, res, cid, rnd, kappa, d, count = struct.unpack_from("<4sHBBIIIQQ", blob)
    assert (magic, ver, kind, res, cid, rnd, kappa, d, count) == (b"ERM1", 1, 0, 0, 1, 9, 8, 64, 6)
    (ct_len,) = struct.unpack_from("<I", blob, 36)
    assert blob[40:40 + ct_len] == msgs[1].ciphertext
    assert pr.RoundMessage.from_bytes(blob) == msgs[1]
    for bad in (blob[:20], blob[:-1], blob + b"\x00", b"ERMX" + blob[4:]):
        with pytest.raises(DecodeError):
            pr.RoundMessage.from_bytes(bad)


def test_ledger_is_byte_exact(setup3):
    pp, keys = setup3
    _, msgs, _, _, _ = make_round(pp, keys, d=1000, kappa=16)
    ledger = pr.account_round(msgs)
    assert ledger.total_bytes == sum(len(m.to_bytes()) for m in msgs)
    row = ledger.rows[0]
    assert row.ct_bytes == 4 + 6 + 1 + 6 + 16 * 49
    assert row.key_bytes == len(msgs[0].partial_key)
    assert ledger.ratio == pytest.approx(8 * ledger.total_bytes / (3 * 32 * 1000))
    assert ledger.ratio_excl_key < ledger.ratio
    lines = ledger.to_csv().splitlines()
    assert lines[0].startswith("round,client") and len(lines) == 4


def entropy_bits(freqs):
    p = freqs[freqs > 0] / freqs.sum()
    return float(-(p * np.log2(p)).sum())


@pytest.mark.parametrize("kappa,skew", [(2, 0.0), (16, 0.0), (128, 1.0), (128, 3.0)])
def test_huffman_round_trip_and_optimality_bounds(kappa, skew):
    rng = np.random.default_rng(kappa)
    p = np.exp(-skew * np.arange(kappa) / kappa * 4)
    p /= p.sum()
    mapping = rng.choice(kappa, size=20_000, p=p)
    blob = pr.huffman_encode_mapping(mapping, kappa)
    assert np.array_equal(pr.huffman_decode_mapping(blob), mapping)
    freqs = np.bincount(mapping, minlength=kappa)
    lengths = np.frombuffer(blob, dtype=np.uint8, count=kappa, offset=12).astype(int)
    used = lengths[freqs > 0]
    # Kraft equality for a complete prefix code (more than one symbol)
    if (freqs > 0).sum() > 1:
        assert math.isclose(sum(2.0 ** -used), 1.0)
    avg = float((freqs * lengths).sum() / freqs.sum())
    H = entropy_bits(freqs)
    assert H - 1e-9 <= avg < H + 1


def test_huffman_single_symbol_and_errors():
    mapping = np.zeros(100, dtype=int)
    assert np.array_equal(pr.huffman_decode_mapping(pr.huffman_encode_mapping(mapping, 4)), mapping)
    with pytest.raises(InvalidArgument):
        pr.huffman_encode_mapping([0, 5], 4)
    with pytest.raises(DecodeError):
        pr.huffman_decode_mapping(b"\x01")
    blob = pr.huffman_encode_mapping(np.arange(50) % 5, 5)
    with pytest.raises(DecodeError):
        pr.huffman_decode_mapping(blob[:-3])


def test_client_update_reuses_given_model(setup3):
    pp, keys = setup3
    w = np.random.default_rng(0).normal(size=100)
    model = cluster_weights(w, 4, seed=0)
    _, info = pr.client_prepare_update(w, 4, 1, 1, keys[0], pr.FixedPointCodec(), pr.FilterParams(), 1,
                                       model=model)
    assert info.model is model
    with pytest.raises(InvalidArgument):
        pr.client_prepare_update(w, 4, 0, 1, keys[0], pr.FixedPointCodec(), pr.FilterParams(), 1)
    with pytest.raises(InvalidArgument):
        pr.client_prepare_update(w, 4, 1, 1, keys[0], pr.FixedPointCodec(), pr.FilterParams(), 1,
                                 mapping_mode="raw")


def test_small_pipeline_example_q8(setup3):
    pp = scheme.setup(256, 2, rng_seed=21)
    keys = scheme.keygen_all(pp, seed=21)
    codec = pr.FixedPointCodec(fractional_bits=8)
    w = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    msgs = [pr.client_prepare_update(w, 2, 1, 5, k, codec, pr.FilterParams(bits_per_entry=32), k.client_id)[0]
            for k in keys]
    res = pr.secure_aggregate(msgs, pp, 2, codec, {0: 0, 1: 1})
    assert res.decrypted.tolist() == [0] * 4 + [2 * 256] * 4
    np.testing.assert_array_equal(res.weights, w)
    assert pr.FixedPointCodec(fractional_bits=8).encode([0.5], 3)[0] == [384]


def test_round_label_embedded(setup3):
    pp, keys = setup3
    for r in (0, 1, 77, 2**31):
        msg, _ = pr.client_prepare_update(np.arange(4.0), 2, 1, r, keys[0], pr.FixedPointCodec(),
                                          pr.FilterParams(), 0)
        assert msg.round == r
        assert scheme.ciphertext_from_bytes(pp, msg.ciphertext).label == str(r).encode()


def test_identical_clients_average_to_their_model():
    pp = scheme.setup(256, 2, rng_seed=3)
    keys = scheme.keygen_all(pp, seed=3)
    codec = pr.FixedPointCodec()
    w = np.random.default_rng(1).normal(size=300)
    msgs, infos = zip(*[pr.client_prepare_update(w, 8, 10, 0, k, codec, pr.FilterParams(bits_per_entry=32),
                                                 7, cluster_seed=5) for k in keys])
    res = pr.secure_aggregate(msgs, pp, 20, codec, {0: 7, 1: 7})
    recon = infos[0].model.centroids[infos[0].model.mapping]
    assert np.abs(res.weights - recon).max() <= 2.0**-16


def test_weighted_two_client_example():
    pp = scheme.setup(256, 2, rng_seed=4)
    keys = scheme.keygen_all(pp, seed=4)
    codec = pr.FixedPointCodec()
    ws = [np.array([0.1, 0.1, 0.7, 0.7]), np.array([-0.3, 0.5, 0.5, -0.3])]
    msgs, infos = zip(*[pr.client_prepare_update(w, 2, c, 0, k, codec, pr.FilterParams(bits_per_entry=32), i)
                        for i, (w, c, k) in enumerate(zip(ws, (1, 3), keys))])
    res = pr.secure_aggregate(msgs, pp, 4, codec, {0: 0, 1: 1})
    t = [i.model.centroids[i.model.mapping] for i in infos]
    np.testing.assert_allclose(res.weights, (1 * t[0] + 3 * t[1]) / 4, atol=2 * 2.0**-16)


def test_ratio_barely_moves_when_kappa_doubles(setup3):
    pp, keys = setup3
    w = np.random.default_rng(2).normal(0, 0.05, 100_000)
    ratios = []
    for kappa in (64, 128):
        msg, _ = pr.client_prepare_update(w, kappa, 100, 1, keys[0], pr.FixedPointCodec(), pr.FilterParams(), 1)
        ratios.append(pr.account_round([msg]).ratio)
    assert abs(ratios[1] - ratios[0]) < 0.01
