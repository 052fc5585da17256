"""Adaptive slicing, slice resizing, a stub patch encoder and token compression."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exceptions import ConfigError, ContractError, DimensionError
from .tensor import SplitMix64, Tensor, add_bias, gelu, matmul, no_grad, pixel_shuffle_s2d, reshape


@dataclass(frozen=True)
class Image:
    """RGB image; ``pixels`` is a uint8 array of shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"image pixels must be (H>=1, W>=1, 3), got {px.shape}")
        object.__setattr__(self, "pixels", np.ascontiguousarray(px, dtype=np.uint8))

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class SliceGrid:
    rows_m: int
    cols_n: int

    @property
    def slice_count(self):
        return self.rows_m * self.cols_n


@dataclass
class PatchTokens:
    """An (h, w, d) grid of visual tokens held as a Tensor."""

    values: Tensor

    def __post_init__(self):
        if not isinstance(self.values, Tensor):
            self.values = Tensor(self.values)
        if self.values.ndim != 3:
            raise DimensionError(f"token grid must be (h, w, d), got {self.values.shape}")

    @property
    def grid_h(self):
        return self.values.shape[0]

    @property
    def grid_w(self):
        return self.values.shape[1]

    @property
    def dim_d(self):
        return self.values.shape[2]

    @property
    def count(self):
        return self.grid_h * self.grid_w


@dataclass
class FrontendConfig:
    threshold_px: int = 448
    vit_region_w: int = 448
    vit_region_h: int = 448
    patch_size: int = 16
    shuffle_rate: int = 2
    n_max: int = 12
    embed_dim: int = 16

    def validate(self):
        for name in ("threshold_px", "vit_region_w", "vit_region_h", "patch_size",
                     "shuffle_rate", "n_max", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        p, r = self.patch_size, self.shuffle_rate
        if self.vit_region_w % p or self.vit_region_h % p:
            raise ConfigError(f"ViT region {self.vit_region_w}x{self.vit_region_h} not divisible by patch {p}")
        if (self.vit_region_w // p) % r or (self.vit_region_h // p) % r:
            raise ConfigError(f"patch grid not divisible by shuffle rate {r}")
        return self


# ---------------------------------------------------------------- slicing


def _aspect_score(width, height, rows, cols, config):
    """|log(slice aspect) - log(ViT aspect)|, kept exact as max(x, 1/x) of the rational ratio x."""
    x = Fraction(width * rows * config.vit_region_h, height * cols * config.vit_region_w)
    return max(x, 1 / x)


def candidate_grids(width, height, config):
    """All (rows, cols) pairs searched for an above-threshold image."""
    ideal = round(width * height / (config.vit_region_w * config.vit_region_h))
    out = []
    for n in (ideal - 1, ideal, ideal + 1):
        if 2 <= n <= config.n_max:
            out += [(m, n // m) for m in range(1, n + 1) if n % m == 0]
    if not out:
        # area ratio far above n_max: fall back to the largest allowed counts
        for n in range(max(2, config.n_max - 1), config.n_max + 1):
            out += [(m, n // m) for m in range(1, n + 1) if n % m == 0]
    return out


def select_slice_grid(width, height, config=None):
    """Choose the slice layout whose slice aspect best matches the ViT region.

    Images within ``threshold_px**2`` pixels stay whole. Otherwise slice
    counts around the area ratio are searched and the grid minimising the
    absolute log aspect difference wins; ties go to fewer slices, then a more
    square grid, then fewer rows.
    """
    config = config or FrontendConfig()
    if width < 1 or height < 1:
        raise DimensionError(f"image must be at least 1x1, got {width}x{height}")
    if width * height <= config.threshold_px ** 2:
        return SliceGrid(1, 1)
    best = min(candidate_grids(width, height, config),
               key=lambda mn: (_aspect_score(width, height, mn[0], mn[1], config),
                               mn[0] * mn[1], abs(mn[0] - mn[1]), mn[0]))
    return SliceGrid(*best)


def split_image(image, grid):
    """Cut ``image`` into ``grid`` slices in row-major order.

    Slice boundaries sit at ``floor(k * size / parts)``.
    """
    if grid.rows_m > image.height or grid.cols_n > image.width:
        raise DimensionError(f"cannot cut {image.width}x{image.height} into {grid.rows_m}x{grid.cols_n}")
    ys = [k * image.height // grid.rows_m for k in range(grid.rows_m + 1)]
    xs = [k * image.width // grid.cols_n for k in range(grid.cols_n + 1)]
    return [Image(image.pixels[ys[i]:ys[i + 1], xs[j]:xs[j + 1]])
            for i in range(grid.rows_m) for j in range(grid.cols_n)]


def _bilinear_axis(src, dst):
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, pos - lo


def resize_bilinear(pixels, out_w, out_h):
    """Bilinear resampling with half-pixel centres, rounded half up to uint8."""
    h, w = pixels.shape[:2]
    if h < 1 or w < 1:
        raise DimensionError("cannot resize an empty image")
    if (h, w) == (out_h, out_w):
        return pixels.copy()
    y0, y1, fy = _bilinear_axis(h, out_h)
    x0, x1, fx = _bilinear_axis(w, out_w)
    img = pixels.astype(np.float64)
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy[:, None, None]) + bot * fy[:, None, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def resize_slice(slice_img, config=None):
    """Rescale a slice independently per axis to the ViT region size."""
    config = config or FrontendConfig()
    if slice_img.pixels.size == 0:
        raise DimensionError("zero-sized slice")
    return Image(resize_bilinear(slice_img.pixels, config.vit_region_w, config.vit_region_h))


# ---------------------------------------------------------------- encoder


@dataclass
class StubPatchEncoder:
    """Seeded per-patch linear embedding followed by one residual GeLU block.

    Stands in for a pretrained visual encoder: tokens keep spatial locality
    but carry no learned semantics. ``final_*`` is the block that may be
    unfrozen during the second training stage.
    """

    patch_size: int
    embed_dim: int
    seed: int = 0
    embed_weight: Tensor = field(init=False)
    embed_bias: Tensor = field(init=False)
    final_weight: Tensor = field(init=False)
    final_bias: Tensor = field(init=False)

    def __post_init__(self):
        rng = SplitMix64(self.seed)
        fan_in = 3 * self.patch_size ** 2
        bound = 1.0 / math.sqrt(fan_in)
        self.embed_weight = Tensor(rng.uniform(-bound, bound, (fan_in, self.embed_dim)))
        self.embed_bias = Tensor(rng.uniform(-0.1, 0.1, self.embed_dim))
        bound = 1.0 / math.sqrt(self.embed_dim)
        self.final_weight = Tensor(rng.uniform(-bound, bound, (self.embed_dim, self.embed_dim)))
        self.final_bias = Tensor(np.zeros(self.embed_dim))

    def params(self, group="all"):
        embed = {"embed_weight": self.embed_weight, "embed_bias": self.embed_bias}
        final = {"final_weight": self.final_weight, "final_bias": self.final_bias}
        return {"embed": embed, "final": final, "all": {**embed, **final}}[group]

    def patchify(self, image):
        """Flatten each patch (pixels scaled to [0, 1]) into rows of a (gh*gw, 3p^2) array."""
        p = self.patch_size
        h, w = image.height, image.width
        if h % p or w % p:
            raise ConfigError(f"slice {w}x{h} not divisible by patch size {p}")
        px = image.pixels.astype(np.float64) / 255.0
        rows = px.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4).reshape(-1, 3 * p * p)
        return rows, h // p, w // p

    def embed(self, image):
        """Frozen patch embedding, as an (N, d) Tensor with its grid dims."""
        rows, gh, gw = self.patchify(image)
        with no_grad():
            emb = add_bias(matmul(Tensor(rows), self.embed_weight), self.embed_bias)
        return emb, gh, gw

    def final_block(self, emb):
        return emb + gelu(add_bias(matmul(emb, self.final_weight), self.final_bias))

    def encode(self, image):
        emb, gh, gw = self.embed(image)
        return PatchTokens(reshape(self.final_block(emb), (gh, gw, self.embed_dim)))


def stub_patch_encoder(slice_img, seed, config=None):
    """Encode one ViT-sized slice with a freshly seeded stub encoder."""
    config = config or FrontendConfig()
    return StubPatchEncoder(config.patch_size, config.embed_dim, seed).encode(slice_img)


def compress_tokens(tokens, r):
    """Pixel-shuffle a token grid: r^2 fewer tokens, r^2 wider channels."""
    return PatchTokens(pixel_shuffle_s2d(tokens.values, r))


def encode_image(image, config=None, seed=0, encoder=None):
    """Full frontend: slice, resize, encode and compress each slice.

    Returns the grid decision and a list of compressed token grids in
    row-major slice order.
    """
    config = (config or FrontendConfig()).validate()
    encoder = encoder or StubPatchEncoder(config.patch_size, config.embed_dim, seed)
    grid = select_slice_grid(image.width, image.height, config)
    out = []
    with no_grad():
        for piece in split_image(image, grid):
            tokens = encoder.encode(resize_slice(piece, config))
            out.append(compress_tokens(tokens, config.shuffle_rate))
    return grid, out


# ---------------------------------------------------------------- PPM I/O


def _ppm_tokens(buf):
    pos, fields = 0, []
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ContractError("truncated PPM header")
        fields.append(buf[start:pos])
    return fields, pos + 1


def read_ppm(path):
    """Read a binary P6 PPM with maxval 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), start = _ppm_tokens(buf)
    if magic != b"P6" or int(maxval) != 255:
        raise ContractError(f"{path}: only P6 PPM with maxval 255 is supported")
    w, h = int(w), int(h)
    data = np.frombuffer(buf, dtype=np.uint8, count=3 * w * h, offset=start)
    return Image(data.reshape(h, w, 3))


def write_ppm(path, image):
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(image.pixels.tobytes())
