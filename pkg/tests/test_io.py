import struct
import wave

import numpy as np
import pytest

from melfb import cnn, io
from melfb.filterbank import FilterBank, FilterChannel


def _bank(rng, k=3, n=64):
    chans = []
    for v in range(k):
        m = 5 + 2 * v
        kern = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        chans.append(FilterChannel(kern, rng.random(4 + v), 100.0 * (v + 1), v))
    return FilterBank(chans, n, 22050)


def _raw_wav(path, tag, bits, channels=1, rate=22050, payload=b"\0" * 16):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = (b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"data" + struct.pack("<I", len(payload)) + payload)
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- WAV ---------------------------------------------------------------------

def test_wav_round_trip_is_exact_on_the_16_bit_grid(tmp_path, rng):
    x = rng.integers(-32767, 32768, 500) / 32767.0
    io.write_wav(tmp_path / "a.wav", x, 22050)
    a = io.read_wav(tmp_path / "a.wav")
    assert a.sample_rate == 22050 and a.channels == 1 and len(a) == 500
    np.testing.assert_array_equal(np.round(a.samples * 32768), np.round(x * 32767))


def test_stereo_is_averaged_to_mono(tmp_path):
    left = np.full(100, 0.5)
    right = np.full(100, -0.25)
    io.write_wav(tmp_path / "s.wav", np.stack([left, right], axis=1), 22050)
    a = io.read_wav(tmp_path / "s.wav")
    assert a.channels == 2
    q = np.round(np.array([0.5, -0.25]) * 32767) / 32768
    np.testing.assert_allclose(a.samples, np.full(100, q.mean()))


@pytest.mark.parametrize("tag,bits,name", [(3, 32, "IEEE float"),
                                           (1, 24, "PCM, 24-bit"),
                                           (1, 8, "PCM, 8-bit"),
                                           (6, 8, "A-law")])
def test_other_encodings_are_rejected_by_name(tmp_path, tag, bits, name):
    _raw_wav(tmp_path / "x.wav", tag, bits)
    with pytest.raises(io.WavFormatError, match=name):
        io.read_wav(tmp_path / "x.wav")


def test_sample_rate_mismatch(tmp_path):
    io.write_wav(tmp_path / "a.wav", np.zeros(10), 16000)
    with pytest.raises(io.WavFormatError, match="16000"):
        io.read_wav(tmp_path / "a.wav", 22050)
    assert io.read_wav(tmp_path / "a.wav", 16000).sample_rate == 16000


def test_not_a_wav(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"hello world, not riff")
    with pytest.raises(io.WavFormatError, match="RIFF"):
        io.read_wav(tmp_path / "x.wav")


def test_hand_built_pcm_matches_stdlib(tmp_path):
    vals = np.array([0, 1, -1, 32767, -32768], dtype="<i2")
    _raw_wav(tmp_path / "p.wav", 1, 16, payload=vals.tobytes())
    with wave.open(str(tmp_path / "p.wav")) as w:
        assert w.getnframes() == 5
    np.testing.assert_array_equal(io.read_wav(tmp_path / "p.wav").samples,
                                  vals / 32768.0)


# -- MKFB --------------------------------------------------------------------

def test_bank_round_trip_is_bit_identical(tmp_path, rng):
    bank = _bank(rng)
    io.save_bank(bank, tmp_path / "b.mkfb")
    back = io.load_bank(tmp_path / "b.mkfb", 22050)
    assert back.n == bank.n and len(back) == len(bank)
    for a, b in zip(bank, back):
        assert a.kernel.tobytes() == b.kernel.tobytes()
        assert a.averaging.tobytes() == b.averaging.tobytes()
        assert a.center_frequency == b.center_frequency and a.index == b.index


def test_bank_byte_layout(tmp_path, rng):
    bank = _bank(rng, k=1, n=32)
    io.save_bank(bank, tmp_path / "b.mkfb")
    raw = (tmp_path / "b.mkfb").read_bytes()
    ch = bank[0]
    assert raw[:4] == b"MKFB"
    assert struct.unpack_from("<III", raw, 4) == (1, 1, 32)
    fc, m = struct.unpack_from("<dI", raw, 16)
    assert fc == 100.0 and m == ch.kernel.size
    pairs = np.frombuffer(raw, "<f8", 2 * m, 28)
    np.testing.assert_array_equal(pairs[0::2] + 1j * pairs[1::2], ch.kernel)
    pos = 28 + 16 * m
    (ma,) = struct.unpack_from("<I", raw, pos)
    np.testing.assert_array_equal(np.frombuffer(raw, "<f8", ma, pos + 4),
                                  ch.averaging)
    assert len(raw) == pos + 4 + 8 * ma


@pytest.mark.parametrize("mutate,msg", [
    (lambda r: b"XXXX" + r[4:], "not an MKFB"),
    (lambda r: r[:4] + struct.pack("<I", 9) + r[8:], "version 9"),
    (lambda r: r[:-3], "end of file"),
    (lambda r: r + b"\0", "trailing"),
])
def test_bank_corruption(tmp_path, rng, mutate, msg):
    io.save_bank(_bank(rng), tmp_path / "b.mkfb")
    raw = (tmp_path / "b.mkfb").read_bytes()
    (tmp_path / "c.mkfb").write_bytes(mutate(raw))
    with pytest.raises(io.FormatError, match=msg):
        io.load_bank(tmp_path / "c.mkfb")


# -- MKNN --------------------------------------------------------------------

def test_network_round_trip(tmp_path, rng):
    net = cnn.build_architecture("small_one", (20, 23), seed=3,
                                 pools=((2, 2), (2, 2)))
    net.scale[:] = rng.random(20) + 0.5
    io.save_network(net, tmp_path / "n.mknn")
    back = io.load_network(tmp_path / "n.mknn")
    assert back.n_params == net.n_params
    for (na, a), (nb, b) in zip(net.parameters(), back.parameters()):
        assert na == nb and a.tobytes() == b.tobytes()
    x = rng.standard_normal((20, 23))
    assert cnn.network_forward(back, x) == cnn.network_forward(net, x)


def test_network_bad_magic(tmp_path):
    (tmp_path / "n.mknn").write_bytes(b"MKFB" + b"\0" * 20)
    with pytest.raises(io.FormatError, match="not an MKNN"):
        io.load_network(tmp_path / "n.mknn")


# -- CSV ---------------------------------------------------------------------

def test_features_csv(tmp_path):
    feats = np.array([[1.0, 2.0, 3.0], [0.1, 0.2, 0.3]])
    io.write_features_csv(tmp_path / "f.csv", feats, [100.0, 250.5])
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "frame,100.0,250.5"
    assert lines[1:] == ["0,1.0,0.1", "1,2.0,0.2", "2,3.0,0.3"]


def test_features_csv_values_round_trip(tmp_path, rng):
    feats = rng.standard_normal((4, 6))
    io.write_features_csv(tmp_path / "f.csv", feats, np.arange(4.0))
    back = np.loadtxt(tmp_path / "f.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(back[:, 1:].T, feats)


def test_bank_and_report_csv(tmp_path, rng):
    bank = _bank(rng)
    io.write_bank_csv(tmp_path / "b.csv", bank)
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0].startswith("channel,center_hz,support,kernel_len")
    assert len(rows) == 1 + len(bank)
    io.write_report_csv(tmp_path / "r.csv", [1.0, 2.0], [3, 4], [5, 6], [7, 8])
    assert (tmp_path / "r.csv").read_text().splitlines()[1] == "0,1.0,3.0,5.0,7.0"
    io.write_sweep_csv(tmp_path / "s.csv", [1.0], (21, 1), np.array([[2.0], [3.0]]))
    assert (tmp_path / "s.csv").read_text().splitlines() == [
        "nu,center_hz,stride21,stride1", "0,1.0,2.0,3.0"]
