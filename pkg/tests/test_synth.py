"""Synthetic sequences, noise models, and Netpbm round-trips."""

import numpy as np
import pytest

from cascade_denoiser.errors import ParameterError, ParseError
from cascade_denoiser.synth import (add_noise, read_frame, read_manifest,
                                    synth_sequence, write_frame, write_manifest,
                                    write_sequence)


def test_zero_motion_all_frames_identical():
    seq = synth_sequence(3, 4, (16, 16), (0, 0), texture="perlin")
    for f in seq.frames[1:]:
        np.testing.assert_array_equal(f.data, seq.frames[0].data)


def test_integer_motion_matches_shift_oracle():
    seq = synth_sequence(5, 3, (12, 12), (1, 0), texture="gradient")
    f0, f1 = seq.frames[0].data, seq.frames[1].data
    np.testing.assert_allclose(f1[:, :, 1:], f0[:, :, :-1], atol=1e-12)
    np.testing.assert_allclose(f1[:, :, 0], f0[:, :, 0], atol=1e-12)


def test_same_seed_bit_identical():
    a = synth_sequence(11, 3, (8, 8), (0.5, -0.25), texture="checker")
    b = synth_sequence(11, 3, (8, 8), (0.5, -0.25), texture="checker")
    for fa, fb in zip(a.frames, b.frames):
        assert fa.data.tobytes() == fb.data.tobytes()


def test_sequence_validation():
    with pytest.raises(ParameterError, match="n_frames"):
        synth_sequence(0, 2, (8, 8), (0, 0))
    with pytest.raises(ParameterError, match="motion"):
        synth_sequence(0, 5, (8, 8), (3, 0))
    with pytest.raises(ParameterError, match="texture"):
        synth_sequence(0, 3, (8, 8), (0, 0), texture="marble")


def test_noise_sigma_zero_is_identity():
    seq = synth_sequence(1, 3, (8, 8), (0, 0))
    noisy = add_noise(seq, sigma=0.0, seed=4)
    for a, b in zip(noisy.frames, seq.frames):
        np.testing.assert_array_equal(a.data, b.data)


def test_noise_sample_std_near_sigma():
    frames = synth_sequence(2, 3, (128, 128), (0, 0), texture="gradient")
    const = frames.frames[0].data * 0 + 0.5
    from cascade_denoiser.tensor import Tensor
    from cascade_denoiser.synth import VideoSequence
    seq = VideoSequence(frames=[Tensor(const)] * 3)
    noisy = add_noise(seq, sigma=0.1, seed=9)
    sd = float((noisy.frames[0].data - 0.5).std())
    assert abs(sd - 0.1) / 0.1 < 0.1  # 16384 pixels, no clipping at 0.5


def test_noise_mean_small_on_interior():
    from cascade_denoiser.tensor import Tensor
    from cascade_denoiser.synth import VideoSequence
    const = np.full((1, 128, 128), 0.5)
    seq = VideoSequence(frames=[Tensor(const)] * 3)
    sigma = 0.05
    noisy = add_noise(seq, sigma=sigma, seed=3)
    mean = float((noisy.frames[0].data - 0.5).mean())
    assert abs(mean) < 3 * sigma / np.sqrt(128 * 128)


def test_noise_reproducible():
    seq = synth_sequence(6, 3, (16, 16), (0, 0))
    a = add_noise(seq, sigma=0.2, seed=42)
    b = add_noise(seq, sigma=0.2, seed=42)
    for fa, fb in zip(a.frames, b.frames):
        assert fa.data.tobytes() == fb.data.tobytes()


def test_noise_sigma_map_variant():
    from cascade_denoiser.tensor import Tensor
    from cascade_denoiser.synth import VideoSequence
    const = np.full((1, 64, 64), 0.5)
    seq = VideoSequence(frames=[Tensor(const)] * 3)
    smap = np.zeros((64, 64))
    smap[:, 32:] = 0.1  # noisy right half, clean left half
    noisy = add_noise(seq, sigma_map=smap, seed=5)
    left = noisy.frames[0].data[:, :, :32]
    right = noisy.frames[0].data[:, :, 32:]
    np.testing.assert_array_equal(left, 0.5)
    assert float((right - 0.5).std()) > 0.05


def test_poisson_gaussian_noise_scales_with_signal():
    from cascade_denoiser.tensor import Tensor
    from cascade_denoiser.synth import VideoSequence
    img = np.concatenate([np.full((1, 64, 32), 0.1), np.full((1, 64, 32), 0.9)], axis=2)
    seq = VideoSequence(frames=[Tensor(img)] * 3)
    noisy = add_noise(seq, model="poisson_gaussian", a=0.01, b=1e-4, seed=6)
    resid = noisy.frames[0].data - img
    assert resid[:, :, 32:].std() > resid[:, :, :32].std()


def test_frame_roundtrip_quantization_bound(tmp_path):
    rng = np.random.default_rng(7)
    frame = rng.uniform(0, 1, (1, 9, 7))
    path = tmp_path / "f.pgm"
    from cascade_denoiser.tensor import Tensor
    write_frame(path, Tensor(frame))
    back = read_frame(path)
    assert np.abs(back.data - frame).max() <= 1.0 / 65535 + 1e-12


def test_color_frame_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    frame = rng.uniform(0, 1, (3, 5, 4))
    path = tmp_path / "f.ppm"
    from cascade_denoiser.tensor import Tensor
    write_frame(path, Tensor(frame))
    back = read_frame(path)
    assert back.data.shape == (3, 5, 4)
    assert np.abs(back.data - frame).max() <= 1.0 / 65535 + 1e-12


def test_one_pixel_roundtrip_exact(tmp_path):
    from cascade_denoiser.tensor import Tensor
    v = 12345 / 65535
    path = tmp_path / "p.pgm"
    write_frame(path, Tensor(np.array(v).reshape(1, 1, 1)))
    assert read_frame(path).data.reshape(()) == pytest.approx(v, abs=1e-15)


def test_truncated_file_parse_error_with_offset(tmp_path):
    from cascade_denoiser.tensor import Tensor
    path = tmp_path / "t.pgm"
    write_frame(path, Tensor(np.zeros((1, 4, 4))))
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 3])
    with pytest.raises(ParseError, match="byte offset"):
        read_frame(path)


def test_bad_magic_parse_error(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P9\n2 2\n65535\n" + b"\x00" * 8)
    with pytest.raises(ParseError, match="magic"):
        read_frame(path)


def test_manifest_roundtrip_and_errors(tmp_path):
    seq = synth_sequence(9, 3, (8, 8), (0, 0))
    manifest = write_sequence(tmp_path / "seq", seq)
    back = read_manifest(manifest)
    assert len(back.frames) == 3
    np.testing.assert_allclose(back.frames[1].data, seq.frames[1].data, atol=1 / 65535)

    bad = tmp_path / "seq" / "bad.txt"
    write_manifest(bad, ["frame_0000.pgm", "missing.pgm"])
    with pytest.raises(ParseError, match="line 2"):
        read_manifest(bad)
