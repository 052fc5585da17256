import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nanoadapt import ConfigError, ContractError, DimensionError
from nanoadapt.frontend import (
    FrontendConfig,
    Image,
    SliceGrid,
    StubPatchEncoder,
    compress_tokens,
    encode_image,
    read_ppm,
    resize_bilinear,
    resize_slice,
    select_slice_grid,
    split_image,
    stub_patch_encoder,
    write_ppm,
)
from nanoadapt.tensor import SplitMix64, Tensor

CFG = FrontendConfig()


def _oracle_grid(width, height, cfg):
    """Brute force over every (m, n) in [1, n_max]^2 whose product is a candidate count."""
    if width * height <= cfg.threshold_px ** 2:
        return (1, 1)
    ideal = round(width * height / (cfg.vit_region_w * cfg.vit_region_h))
    counts = {c for c in (ideal - 1, ideal, ideal + 1) if 2 <= c <= cfg.n_max}
    best, best_key = None, None
    for m in range(1, cfg.n_max + 1):
        for n in range(1, cfg.n_max + 1):
            if m * n not in counts:
                continue
            score = abs(math.log(width / n) - math.log(height / m) - math.log(cfg.vit_region_w / cfg.vit_region_h))
            # rounding absorbs float noise between exactly tied grids
            key = (round(score, 12), m * n, abs(m - n), m)
            if best_key is None or key < best_key:
                best, best_key = (m, n), key
    return best


def _image(w, h, seed=0):
    return Image(SplitMix64(seed).integers(0, 256, (h, w, 3)).astype(np.uint8))


# ---------------------------------------------------------------- grid selection


def test_within_threshold_is_single_slice():
    assert select_slice_grid(448, 448) == SliceGrid(1, 1)


def test_landscape_full_hd():
    assert select_slice_grid(1920, 1080) == SliceGrid(2, 5)
    assert _oracle_grid(1920, 1080, CFG) == (2, 5)


def test_portrait_full_hd_is_transpose():
    assert select_slice_grid(1080, 1920) == SliceGrid(5, 2)
    assert _oracle_grid(1080, 1920, CFG) == (5, 2)


def test_zero_size_image_rejected():
    with pytest.raises(DimensionError):
        select_slice_grid(0, 10)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 2000), st.integers(1, 2000))
def test_grid_matches_enumeration_oracle(w, h):
    g = select_slice_grid(w, h, CFG)
    if (w * h + 0.0) / (448 * 448) < CFG.n_max + 1.5:
        assert (g.rows_m, g.cols_n) == _oracle_grid(w, h, CFG)
    assert g.rows_m * g.cols_n <= CFG.n_max
    if w * h > CFG.threshold_px ** 2:
        assert g.rows_m * g.cols_n >= 2


@settings(max_examples=100, deadline=None)
@given(st.integers(449, 1800), st.integers(449, 1800))
def test_grid_transpose_symmetry(w, h):
    a, b = select_slice_grid(w, h), select_slice_grid(h, w)
    assert a.slice_count == b.slice_count
    if a.rows_m != a.cols_n:
        # ties may break differently, so only the score must agree
        sa = abs(math.log((w / a.cols_n) / (h / a.rows_m)))
        sb = abs(math.log((h / b.cols_n) / (w / b.rows_m)))
        assert sa == pytest.approx(sb, abs=1e-12)


# ---------------------------------------------------------------- splitting and resizing


def test_split_covers_image_in_row_major_order():
    img = _image(10, 7)
    pieces = split_image(img, SliceGrid(2, 3))
    assert len(pieces) == 6
    top = np.concatenate([p.pixels for p in pieces[:3]], axis=1)
    bottom = np.concatenate([p.pixels for p in pieces[3:]], axis=1)
    assert np.array_equal(np.concatenate([top, bottom], axis=0), img.pixels)


def test_resize_scales_to_vit_region():
    out = resize_slice(_image(896, 448))
    assert (out.width, out.height) == (448, 448)


def test_resize_identity():
    img = _image(448, 448, seed=3)
    assert np.array_equal(resize_slice(img).pixels, img.pixels)


def test_bilinear_two_to_one_half_pixel():
    # half-pixel centre of the single output pixel sits between 0 and 255
    px = np.array([[[0, 0, 0], [255, 255, 255]]], dtype=np.uint8)
    assert resize_bilinear(px, 1, 1)[0, 0].tolist() == [128, 128, 128]


def test_bilinear_upsample_constant_is_constant():
    px = np.full((3, 5, 3), 77, dtype=np.uint8)
    assert np.all(resize_bilinear(px, 11, 8) == 77)


def test_resize_rejects_empty_slice():
    with pytest.raises((DimensionError, ValueError)):
        resize_bilinear(np.zeros((0, 4, 3), dtype=np.uint8), 2, 2)


# ---------------------------------------------------------------- encoder and compression


def test_patch_grid_shape():
    tokens = stub_patch_encoder(_image(448, 448), seed=0, config=FrontendConfig(patch_size=32))
    assert tokens.values.shape == (14, 14, 16)


def test_encoder_deterministic():
    img = _image(448, 448, seed=1)
    a, b = stub_patch_encoder(img, 5), stub_patch_encoder(img, 5)
    assert a.values.data.tobytes() == b.values.data.tobytes()


def test_black_slice_is_bias_response():
    enc = StubPatchEncoder(16, 16, seed=2)
    out = enc.encode(Image(np.zeros((448, 448, 3), dtype=np.uint8))).values.data.reshape(-1, 16)
    bias_only = enc.final_block(Tensor(enc.embed_bias.data[None, :])).data[0]
    assert np.allclose(out, bias_only, atol=0)


def test_encoder_rejects_indivisible_slice():
    with pytest.raises(ConfigError):
        StubPatchEncoder(16, 8).encode(_image(40, 32))


def test_compression_shape_and_count():
    tok = StubPatchEncoder(32, 64).encode(_image(448, 448))
    c = compress_tokens(tok, 2)
    assert c.values.shape == (7, 7, 256)
    assert tok.count == 196 and c.count == 49
    assert np.array_equal(compress_tokens(tok, 1).values.data, tok.values.data)


def test_config_validation():
    with pytest.raises(ConfigError):
        FrontendConfig(patch_size=30).validate()
    with pytest.raises(ConfigError):
        FrontendConfig(patch_size=32, shuffle_rate=4).validate()


def test_encode_image_default_pipeline():
    grid, tokens = encode_image(_image(1920, 1080))
    assert (grid.rows_m, grid.cols_n) == (2, 5)
    assert len(tokens) == 10 and all(t.values.shape == (14, 14, 64) for t in tokens)


# ---------------------------------------------------------------- PPM


def test_ppm_round_trip(tmp_path):
    img = _image(5, 3)
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm").pixels, img.pixels)


def test_ppm_comments(tmp_path):
    body = bytes(range(12))
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 2\n255\n" + body)
    assert read_ppm(tmp_path / "c.ppm").pixels.reshape(-1).tolist() == list(body)


def test_ppm_rejects_other_formats(tmp_path):
    (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ContractError):
        read_ppm(tmp_path / "p3.ppm")
