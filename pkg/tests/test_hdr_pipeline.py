import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

import oracles
from conftest import T_DEFAULT
from pfspad.config import ConventionalConfig, QisConfig, SpadConfig
from pfspad.hdr_pipeline import (SUMMARY_HEADER, CountImage, FluxImage, PfmError, decode_pfm,
                                 encode_pfm, load_flux_image, read_pfm, reconstruct_flux, render,
                                 rescale_dynamic_range, simulate_capture, tone_map,
                                 two_patch_scene, write_outputs, write_pfm)
from pfspad.photon_mc import simulate_counts
from pfspad.spad_analytic import expected_counts

RAMP = [[(0.5, 1.0, 2.0), (4.0, 8.0, 16.0)],
        [(32.0, 64.0, 128.0), (1e-3, 3.25, 7e6)]]


# --- PFM codec --------------------------------------------------------------------------


def test_single_pixel_gray(tmp_path):
    path = tmp_path / "one.pfm"
    path.write_bytes(b"Pf\n1 1\n-1.0\n" + struct.pack("<f", 1.0))
    img = load_flux_image(path)
    assert (img.width, img.height, img.channels) == (1, 1, 1)
    assert img.data.ravel().tolist() == [1.0]


def test_endianness_symmetry(tmp_path):
    little = tmp_path / "le.pfm"
    big = tmp_path / "be.pfm"
    little.write_bytes(oracles.encode_pfm_reference(RAMP, 3, little_endian=True))
    big.write_bytes(oracles.encode_pfm_reference(RAMP, 3, little_endian=False))
    np.testing.assert_array_equal(load_flux_image(little).data, load_flux_image(big).data)


@pytest.mark.parametrize("little", [True, False])
def test_color_ramp_matches_reference_decoder(little):
    buf = oracles.encode_pfm_reference(RAMP, 3, little_endian=little)
    width, height, channels, rows = oracles.decode_pfm_reference(buf)
    data = decode_pfm(buf)
    assert data.shape == (height, width, channels) == (2, 2, 3)
    for r in range(height):
        for c in range(width):
            assert tuple(float(v) for v in data[r, c]) == rows[r][c]
    # top row of the image is the last row stored
    assert tuple(data[0, 0]) == (0.5, 1.0, 2.0)


def test_encoder_matches_reference_decoder():
    data = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3) * 0.5
    width, height, channels, rows = oracles.decode_pfm_reference(encode_pfm(data))
    assert (width, height, channels) == (3, 2, 3)
    for r in range(2):
        for c in range(3):
            assert rows[r][c] == tuple(float(v) for v in data[r, c])


@pytest.mark.parametrize("buf, message", [
    (b"P6\n1 1\n-1.0\n" + b"\0" * 4, "bad magic"),
    (b"Pf\n1\n", "truncated header"),
    (b"Pf\nx 1\n-1.0\n" + b"\0" * 4, "malformed"),
    (b"Pf\n0 1\n-1.0\n", "bad dimensions"),
    (b"Pf\n1 1\n0.0\n" + b"\0" * 4, "bad scale"),
    (b"Pf\n2 2\n-1.0\n" + b"\0" * 12, "truncated payload"),
    (b"PF\n1 1\n-1.0\n" + struct.pack("<3f", 1.0, math.nan, 2.0), "NaN"),
])
def test_pfm_errors(buf, message):
    with pytest.raises(PfmError, match=message):
        decode_pfm(buf)


def test_negative_values_clamped_with_warning(tmp_path):
    path = tmp_path / "neg.pfm"
    write_pfm(path, np.array([[[-1.0], [2.0]], [[-3.0], [4.0]]], dtype=np.float32))
    with pytest.warns(UserWarning, match="clamped 2 negative"):
        img = load_flux_image(path)
    assert img.data.min() == 0.0 and img.data.max() == 4.0


def test_missing_file_reported(tmp_path):
    with pytest.raises(OSError):
        read_pfm(tmp_path / "absent.pfm")


def test_flux_image_validation():
    with pytest.raises(ValueError):
        FluxImage(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        FluxImage(np.array([[[-1.0]]]))
    with pytest.raises(ValueError):
        FluxImage(np.zeros((0, 2, 1)))
    assert FluxImage(np.ones((3, 4))).channels == 1


# --- rescaling ----------------------------------------------------------------------------


def test_rescale_ratio_and_peak():
    img = FluxImage(np.array([[1.0, 5.0], [0.0, 30.0]]))
    out = rescale_dynamic_range(img, 1e6, 1e10)
    pos = out.data[out.data > 0]
    assert pos.max() == pytest.approx(1e10, rel=1e-12)
    assert pos.min() == pytest.approx(1e4, rel=1e-12)
    assert out.data[1, 0, 0] == 0.0


def test_rescale_idempotent():
    img = FluxImage(np.array([[1e4, 3e6], [7e8, 1e10]]))
    out = rescale_dynamic_range(img, 1e6, 1e10)
    np.testing.assert_allclose(out.data, img.data, rtol=1e-12)


def test_rescale_constant_image_rejected():
    with pytest.raises(ValueError):
        rescale_dynamic_range(FluxImage(np.full((2, 2), 3.0)), 1e3, 1e6)
    with pytest.raises(ValueError):
        rescale_dynamic_range(FluxImage(np.array([[1.0, 2.0]])), 1.0, 1e6)


@settings(max_examples=50)
@given(values=st.lists(st.floats(1e-6, 1e6), min_size=2, max_size=40),
       ratio=st.floats(10.0, 1e8), peak=st.floats(1e3, 1e12))
def test_rescale_preserves_order(values, ratio, peak):
    data = np.array(values)
    if data.min() == data.max():
        return
    out = rescale_dynamic_range(FluxImage(data[None, :]), ratio, peak).data.ravel()
    order = np.argsort(data, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


# --- capture and reconstruction -----------------------------------------------------------


def test_uniform_spad_capture_mean():
    cfg = SpadConfig(quantum_efficiency=0.4, dead_time=149.7e-9)
    img = FluxImage(np.full((40, 40), 1e8))
    counts = simulate_capture(img, cfg, T_DEFAULT, seed=0).counts.ravel()
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    assert expected_counts(1e8, cfg, T_DEFAULT) == pytest.approx(2.86205e4, rel=1e-5)
    assert abs(counts.mean() - expected_counts(1e8, cfg, T_DEFAULT)) <= 3 * se


def test_conventional_saturates_everywhere(conventional_ref):
    img = FluxImage(np.full((4, 5, 3), 1e9))
    counts = simulate_capture(img, conventional_ref, T_DEFAULT, seed=1)
    assert np.all(counts.counts == 33400)
    assert counts.sensor == "conventional"


def test_capture_deterministic(spad_proto):
    img = FluxImage(np.logspace(3, 9, 48).reshape(4, 4, 3))
    a = simulate_capture(img, spad_proto, 1e-3, seed=7)
    b = simulate_capture(img, spad_proto, 1e-3, seed=7)
    np.testing.assert_array_equal(a.counts, b.counts)
    c = simulate_capture(img, spad_proto, 1e-3, seed=7, threads=3)
    np.testing.assert_array_equal(a.counts, c.counts)


def test_channel_streams_independent_of_order(spad_proto):
    img = FluxImage(np.logspace(4, 8, 2 * 3 * 3).reshape(2, 3, 3))
    counts = simulate_capture(img, spad_proto, 1e-3, seed=3).counts
    flat = img.pixels()
    # simulate channels in reverse order, one stream at a time
    for c in (2, 1, 0):
        for p in range(flat.shape[0]):
            single = simulate_counts(spad_proto, [flat[p, c]], 1e-3, master_seed=3,
                                     stream_offset=p * 3 + c)
            assert single[0] == counts.reshape(-1, 3)[p, c]


def test_count_image_capacity_checked(conventional_ref):
    with pytest.raises(ValueError, match="capacity"):
        CountImage(np.full((1, 1, 1), 33401), conventional_ref, T_DEFAULT)


def test_spad_zero_counts_give_zero_flux(spad_proto):
    flux = reconstruct_flux(CountImage(np.zeros((2, 2, 1)), spad_proto, T_DEFAULT))
    assert not flux.data.any() and not flux.saturated.any()


def test_round_trip_uniform_image():
    cfg = SpadConfig(quantum_efficiency=0.4, dead_time=149.7e-9)
    img = FluxImage(np.full((20, 20), 1e8))
    flux = reconstruct_flux(simulate_capture(img, cfg, T_DEFAULT, seed=2))
    assert flux.data.mean() == pytest.approx(1e8, rel=0.01)


def test_qis_full_pixel_flagged():
    cfg = QisConfig(quantum_efficiency=0.8, bin_width=1e-6)
    flux = reconstruct_flux(CountImage(np.array([[[5000], [10]]]), cfg, 5e-3))
    assert flux.saturated[0, 0, 0] and not flux.saturated[0, 1, 0]
    assert np.all(np.isfinite(flux.data))


def test_conventional_saturated_pixels_flagged(conventional_ref):
    flux = reconstruct_flux(CountImage(np.array([[[33400], [4500]]]), conventional_ref,
                                       T_DEFAULT))
    assert flux.data[0, 0, 0] == pytest.approx(33400 / (0.9 * T_DEFAULT))
    assert flux.saturated[:, :, 0].tolist() == [[True, False]]


def test_two_patch_fidelity_ordering(spad_proto, conventional_ref):
    img = two_patch_scene(16, 16)
    spad = reconstruct_flux(simulate_capture(img, spad_proto, T_DEFAULT, seed=0))
    assert spad.data[:, :8].mean() == pytest.approx(1e4, rel=0.1)
    assert spad.data[:, 8:].mean() == pytest.approx(1e9, rel=0.1)
    conv = reconstruct_flux(simulate_capture(img, conventional_ref, T_DEFAULT, seed=0))
    assert conv.saturated[:, 8:].all() and not conv.saturated[:, :8].any()


# --- outputs --------------------------------------------------------------------------------


def test_tone_map_shape():
    toned = tone_map(FluxImage(np.logspace(0, 6, 12).reshape(2, 2, 3)))
    assert toned.shape == (2, 2, 3) and toned.dtype == np.uint8


def test_write_outputs(tmp_path, conventional_ref):
    img = two_patch_scene(6, 8, dark=1e5, bright=1e9, channels=3)
    counts = simulate_capture(img, conventional_ref, T_DEFAULT, seed=0)
    flux = reconstruct_flux(counts)
    paths = write_outputs(counts, flux, tone_map(flux), tmp_path / "out")
    with Image.open(paths["png"]) as png:
        assert png.size == (8, 6) and png.mode == "RGB"
    back = load_flux_image(paths["pfm"])
    np.testing.assert_array_equal(back.data, flux.data.astype(np.float32).astype(np.float64))
    lines = paths["summary"].read_text().splitlines()
    assert lines[0] == SUMMARY_HEADER
    assert [row.split(",")[0] for row in lines[1:]] == ["red", "green", "blue"]
    saturated = sum(int(row.split(",")[-1]) for row in lines[1:])
    assert saturated == int(flux.saturated.sum()) == 6 * 4 * 3


def test_write_outputs_creates_directory(tmp_path):
    flux = FluxImage(np.ones((2, 2)))
    paths = write_outputs(None, flux, tone_map(flux), tmp_path / "new_dir" / "x")
    assert all(p.is_file() for p in paths.values())


def test_write_outputs_reports_path(tmp_path):
    flux = FluxImage(np.ones((2, 2)))
    (tmp_path / "blocker").write_text("")
    with pytest.raises(OSError, match="cannot write .*blocker"):
        write_outputs(None, flux, tone_map(flux), tmp_path / "blocker" / "x")


def test_render_bit_identical(tmp_path, spad_proto):
    img = two_patch_scene(8, 8, channels=3)
    _, _, _, a = render(img, spad_proto, 1e-3, seed=5, prefix=tmp_path / "a")
    _, _, _, b = render(img, spad_proto, 1e-3, seed=5, threads=2, prefix=tmp_path / "b")
    for kind in ("png", "pfm", "summary"):
        assert a[kind].read_bytes() == b[kind].read_bytes()
