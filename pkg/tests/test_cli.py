import numpy as np
import pytest

from melfb import io
from melfb.cli import Config, UsageError, main

SR = 22050
N_SAMPLES = 37248  # 115 frames of 1024 at hop 315


@pytest.fixture(scope="module")
def audio(tmp_path_factory):
    d = tmp_path_factory.mktemp("audio")
    t = np.arange(N_SAMPLES) / SR
    io.write_wav(d / "sine.wav", 0.5 * np.sin(2 * np.pi * 1000 * t), SR)
    io.write_wav(d / "silence.wav", np.zeros(N_SAMPLES), SR)
    noise = np.random.default_rng(5).uniform(-0.5, 0.5, (N_SAMPLES, 2))
    io.write_wav(d / "stereo.wav", noise, SR)
    io.write_wav(d / "mono.wav", noise.mean(axis=1), SR)
    io.write_wav(d / "low.wav", np.zeros(N_SAMPLES), 16000)
    return d


@pytest.fixture(scope="module")
def bank_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("bank") / "bank.mkfb"
    assert main(["design", "--out", str(path)]) == 0
    return path


def _read(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    header = open(path).readline().strip().split(",")
    return np.array(header[1:], dtype=float), data[:, 1:]


# -- arch --------------------------------------------------------------------

@pytest.mark.parametrize("name,total,classifier", [("small_two", 94337, 79969),
                                                   ("small_one", 53857, 39489)])
def test_arch_counts(capsys, name, total, classifier):
    assert main(["arch", name]) == 0
    out = capsys.readouterr().out
    assert f"{total}" in out and f"{classifier}" in out


def test_arch_unknown_name_is_usage_error(capsys):
    assert main(["arch", "huge"]) == 2
    assert main([]) == 2


# -- design ------------------------------------------------------------------

def test_design_writes_bank_and_sidecar(bank_file, capsys):
    bank = io.load_bank(bank_file)
    assert len(bank) == 80 and bank.n == 2048
    rows = bank_file.with_suffix(".csv").read_text().splitlines()
    assert len(rows) == 81


def test_design_table(tmp_path, capsys):
    cfg = tmp_path / "k1.cfg"
    cfg.write_text("# one channel\nK = 1\n")
    assert main(["design", "--config", str(cfg), "--out",
                 str(tmp_path / "b.mkfb")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["channel", "center_hz", "support"]
    assert len(lines) == 2


def test_bad_frequency_range_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("f_min = 9000\nf_max = 8000\n")
    assert main(["design", "--config", str(cfg), "--out",
                 str(tmp_path / "b.mkfb")]) == 2
    assert "f_min" in capsys.readouterr().err


def test_config_validation(tmp_path):
    with pytest.raises(UsageError, match="divisible"):
        Config(hop=300, stride=21)
    with pytest.raises(UsageError, match="Nyquist"):
        Config(f_max=12000.0)
    with pytest.raises(UsageError, match="variant"):
        Config(variant="mystery")
    p = tmp_path / "c.cfg"
    p.write_text("hop = 315\nsmoothing = 3\n")
    with pytest.raises(UsageError, match="unknown key 'smoothing'"):
        Config.from_file(p)
    p.write_text("hop = many\n")
    with pytest.raises(UsageError, match="cannot read"):
        Config.from_file(p)
    p.write_text("hop = 630  # doubled\nstride = 42\n")
    assert Config.from_file(p, seed=4) == Config(hop=630, stride=42, seed=4)


def test_unknown_config_key_exits_2(tmp_path, audio):
    p = tmp_path / "c.cfg"
    p.write_text("colour = blue\n")
    assert main(["features", str(audio / "sine.wav"), "--config", str(p)]) == 2


def test_stride_override_must_divide_hop(audio):
    assert main(["features", str(audio / "sine.wav"), "--stride", "20"]) == 2


# -- features ----------------------------------------------------------------

def test_features_shape_and_tone(audio, bank_file, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["features", str(audio / "sine.wav"), "--bank", str(bank_file),
                 "--out", str(out)]) == 0
    centers, data = _read(out)
    assert data.shape == (115, 80)
    peak = np.argmax(data.mean(axis=0))
    nearest = np.argmin(np.abs(centers - 1000.0))
    assert abs(peak - nearest) <= 1


@pytest.mark.parametrize("variant", ["naive", "fixed", "varwidth", "stft"])
def test_every_variant_finds_the_tone(audio, bank_file, tmp_path, variant):
    out = tmp_path / "f.csv"
    assert main(["features", str(audio / "sine.wav"), "--bank", str(bank_file),
                 "--variant", variant, "--out", str(out)]) == 0
    centers, data = _read(out)
    assert data.shape == (115, 80)
    nearest = np.argmin(np.abs(centers - 1000.0))
    assert abs(np.argmax(data.mean(axis=0)) - nearest) <= 1


def test_silence_is_clipped(audio, bank_file, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["features", str(audio / "silence.wav"), "--bank",
                 str(bank_file), "--out", str(out)]) == 0
    _, data = _read(out)
    np.testing.assert_array_equal(data, np.log(1e-7))


def test_features_are_deterministic(audio, bank_file, tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert main(["features", str(audio / "mono.wav"), "--bank",
                     str(bank_file), "--seed", "3", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_stereo_equals_its_downmix(audio, bank_file, tmp_path):
    main(["features", str(audio / "stereo.wav"), "--bank", str(bank_file),
          "--out", str(tmp_path / "s.csv")])
    main(["features", str(audio / "mono.wav"), "--bank", str(bank_file),
          "--out", str(tmp_path / "m.csv")])
    _, s = _read(tmp_path / "s.csv")
    _, m = _read(tmp_path / "m.csv")
    # the down-mix is re-quantised to 16 bits
    np.testing.assert_allclose(s, m, atol=1e-2)


def test_stdout_output(audio, bank_file, capsys):
    assert main(["features", str(audio / "sine.wav"), "--bank",
                 str(bank_file), "--variant", "stft"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("frame,") and len(lines) == 116


def test_reflect_padding_adds_frames(audio, bank_file, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("padding = reflect\n")
    out = tmp_path / "f.csv"
    assert main(["features", str(audio / "sine.wav"), "--bank", str(bank_file),
                 "--variant", "stft", "--config", str(cfg),
                 "--out", str(out)]) == 0
    assert _read(out)[1].shape == (119, 80)


def test_standardize(audio, bank_file, tmp_path):
    out = tmp_path / "f.csv"
    assert main(["features", str(audio / "mono.wav"), "--bank", str(bank_file),
                 "--standardize", "--out", str(out)]) == 0
    _, data = _read(out)
    np.testing.assert_allclose(data.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(data.std(axis=0), 1, atol=1e-9)


def test_designing_inline_matches_loaded_bank(audio, bank_file, tmp_path):
    main(["features", str(audio / "mono.wav"), "--bank", str(bank_file),
          "--out", str(tmp_path / "a.csv")])
    main(["features", str(audio / "mono.wav"), "--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_custom_centers_and_widths(audio, tmp_path):
    (tmp_path / "c.txt").write_text("500\n1000\n2000\n")
    (tmp_path / "w.txt").write_text("63\n126\n252\n")
    out = tmp_path / "f.csv"
    assert main(["features", str(audio / "sine.wav"), "--centers",
                 str(tmp_path / "c.txt"), "--widths", str(tmp_path / "w.txt"),
                 "--variant", "varwidth", "--out", str(out)]) == 0
    centers, data = _read(out)
    np.testing.assert_array_equal(centers, [500, 1000, 2000])
    assert np.argmax(data.mean(axis=0)) == 1


@pytest.mark.parametrize("name", ["low.wav", "missing.wav"])
def test_io_errors_exit_3(audio, name, capsys):
    assert main(["features", str(audio / name)]) == 3
    assert capsys.readouterr().err


def test_float_wav_exits_3(tmp_path, capsys):
    import struct
    fmt = struct.pack("<HHIIHH", 3, 1, SR, 4 * SR, 4, 32)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data\0\0\0\0"
    (tmp_path / "f.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    assert main(["features", str(tmp_path / "f.wav")]) == 3
    assert "IEEE float" in capsys.readouterr().err


def test_too_short_signal_is_usage_error(tmp_path):
    io.write_wav(tmp_path / "s.wav", np.zeros(100), SR)
    assert main(["features", str(tmp_path / "s.wav"), "--variant", "stft"]) == 2


# -- verify ------------------------------------------------------------------

def test_verify_hann(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["verify", "--n-signals", "5", "--out", str(out)]) == 0
    assert "bound holds" in capsys.readouterr().out
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows.shape == (80, 5)
    assert np.all(rows[:, 4] <= rows[:, 2] * 512 * 3)  # max error vs bound


def test_verify_gaussian(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["verify", "--mode", "gaussian", "--n-signals", "5",
                 "--out", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.all(rows[:, 2] < 1e-9)
    assert np.all(rows[:, 4] < 1e-6)


def test_verify_stride_sweep(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["verify", "--stride-sweep", "--n-signals", "3",
                 "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "stride  21" in text and "non-increasing" in text
    assert out.read_text().splitlines()[0] == "nu,center_hz,stride21,stride3,stride1"


def test_verify_rejects_zero_signals():
    assert main(["verify", "--n-signals", "0"]) == 2
