"""Grayscale images, subpixel sampling, gradients and Gaussian pyramids.

Intensities are stored as float64 in [0, 1]; 8-bit rasters are divided by 255
on load.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MIN_LEVEL_SIDE = 7


class BoundaryError(ValueError):
    """A sample or stencil reaches outside the image."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel image, ``data[y, x]`` with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise ValueError("zero-dimension image")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def from_uint8(cls, arr) -> "GrayImage":
        arr = np.asarray(arr)
        if arr.ndim == 3:
            arr = arr[..., :3].astype(np.float64).mean(axis=2)
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)


# -- raster I/O ---------------------------------------------------------------

def _pnm_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pnm(path) -> np.ndarray:
    """Decode binary PGM (P5) or PPM (P6) into a uint8/uint16 array."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    (w, h, maxval), offset = _pnm_tokens(buf[2:], 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if w <= 0 or h <= 0:
        raise ValueError(f"{path}: zero-dimension image")
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = w * h * channels
    raster = np.frombuffer(buf, dtype=dtype, count=count, offset=2 + offset)
    shape = (h, w) if channels == 1 else (h, w, 3)
    arr = raster.reshape(shape)
    if maxval != 255:
        arr = np.rint(arr.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return arr


def load_gray(path) -> GrayImage:
    """Load a PGM/PPM (or anything Pillow reads) as a normalized gray image.

    Colour input is reduced to the plain mean of R, G and B before dividing
    by 255.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P5", b"P6"):
        arr = read_pnm(path)
    else:
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise ValueError(f"{path}: unsupported format") from exc
        try:
            with Image.open(path) as im:
                if im.mode not in ("L", "RGB", "RGBA"):
                    im = im.convert("RGB")
                arr = np.asarray(im)
        except Exception as exc:
            raise ValueError(f"{path}: unsupported or unreadable raster") from exc
    if arr.size == 0:
        raise ValueError(f"{path}: zero-dimension image")
    return GrayImage.from_uint8(arr)


def encode_pgm(img: GrayImage | np.ndarray) -> bytes:
    arr = img.to_uint8() if isinstance(img, GrayImage) else np.asarray(img, np.uint8)
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("expected an (H, W, 3) uint8 array")
    h, w = rgb.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(rgb).tobytes()


def save_pgm(path, img) -> None:
    Path(path).write_bytes(encode_pgm(img))


def save_ppm(path, rgb) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


# -- sampling -----------------------------------------------------------------

def bilinear(data: np.ndarray, xs, ys) -> np.ndarray:
    """Vectorized bilinear lookup; the caller guarantees in-range coordinates."""
    h, w = data.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 2) if w > 1 else np.zeros(xs.shape, np.intp)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 2) if h > 1 else np.zeros(ys.shape, np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    # weighted form keeps integer positions bit-exact
    return ((1.0 - fx) * (1.0 - fy) * data[y0, x0]
            + fx * (1.0 - fy) * data[y0, x1]
            + (1.0 - fx) * fy * data[y1, x0]
            + fx * fy * data[y1, x1])


def sample_bilinear(img: GrayImage, x: float, y: float) -> float:
    if not (0.0 <= x <= img.width - 1 and 0.0 <= y <= img.height - 1):
        raise BoundaryError(f"({x}, {y}) outside {img.width}x{img.height} image")
    return float(bilinear(img.data, x, y))


def gradient_at(img: GrayImage, x: int, y: int) -> tuple[float, float]:
    """Central-difference derivatives at an interior integer pixel."""
    if not (1 <= x <= img.width - 2 and 1 <= y <= img.height - 2):
        raise BoundaryError(f"gradient stencil at ({x}, {y}) leaves the image")
    d = img.data
    return (d[y, x + 1] - d[y, x - 1]) / 2.0, (d[y + 1, x] - d[y - 1, x]) / 2.0


# -- pyramid ------------------------------------------------------------------

def pyr_down(img: GrayImage) -> GrayImage:
    """Halve an image with the separable [1/4, 1/2, 1/4] kernel.

    Equivalent to the 3x3 stencil with 1/4 at the centre, 1/8 on the four
    edge neighbours and 1/16 on the corners, evaluated at even parent pixels.
    Neighbours outside the parent are mirrored about the border pixel
    (index -1 reads index 1), so the weights always sum to one.
    """
    src = img.data
    h, w = src.shape
    nh, nw = h // 2, w // 2
    if nh < 1 or nw < 1:
        raise ValueError(f"cannot halve a {w}x{h} image")
    pad = np.pad(src, 1, mode="reflect") if min(h, w) > 1 else np.pad(src, 1, mode="edge")
    # rows first: parent rows 2y-1, 2y, 2y+1 sit at padded rows 2y, 2y+1, 2y+2
    rows = (0.25 * pad[0:2 * nh:2] + 0.5 * pad[1:2 * nh + 1:2] + 0.25 * pad[2:2 * nh + 2:2])
    out = (0.25 * rows[:, 0:2 * nw:2] + 0.5 * rows[:, 1:2 * nw + 1:2]
           + 0.25 * rows[:, 2:2 * nw + 2:2])
    return GrayImage(np.clip(out, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class ImagePyramid:
    levels: tuple

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def __getitem__(self, j: int) -> GrayImage:
        return self.levels[j]

    def __len__(self) -> int:
        return len(self.levels)


def max_levels(width: int, height: int, min_side: int = MIN_LEVEL_SIDE) -> int:
    n = 0
    while width >= min_side and height >= min_side:
        n += 1
        width //= 2
        height //= 2
    return n


def build_pyramid(img: GrayImage, n_levels: int = 3, *, strict: bool = False,
                  min_side: int = MIN_LEVEL_SIDE) -> ImagePyramid:
    """Level 0 is ``img``; each further level is ``pyr_down`` of the previous.

    If ``n_levels`` would produce a level narrower than ``min_side`` the count
    is reduced with a warning, or ``ValueError`` is raised when ``strict``.
    """
    if n_levels < 1:
        raise ValueError("n_levels must be >= 1")
    allowed = max_levels(img.width, img.height, min_side)
    if allowed < 1:
        raise ValueError(f"{img.width}x{img.height} image is smaller than {min_side} px")
    if n_levels > allowed:
        msg = (f"{n_levels} pyramid levels requested for a {img.width}x{img.height} "
               f"image; using {allowed}")
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        n_levels = allowed
    levels = [img]
    for _ in range(n_levels - 1):
        levels.append(pyr_down(levels[-1]))
    return ImagePyramid(tuple(levels))
