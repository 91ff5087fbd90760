"""Binary images, PGM I/O, region labeling and contour tracing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from rpdct import kernels

DEFAULT_THRESHOLD = 128


class ImageError(ValueError):
    """Base class for input images that cannot be processed."""


class PgmError(ImageError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class NoObjectError(ImageError):
    pass


class MultipleObjectsError(ImageError):
    pass


class DegenerateContourError(ImageError):
    pass


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """Row-major binary raster; ``pixels[y, x]`` is True for foreground."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=bool, copy=True)
        if px.ndim != 2 or px.shape[0] == 0 or px.shape[1] == 0:
            raise ImageError(f"image must be a non-empty 2-D raster, got shape {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BinaryImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def to_gray(self) -> np.ndarray:
        return np.where(self.pixels, 255, 0).astype(np.uint8)


# --- PGM ---------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*")


def _header_tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    values = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        pos = m.end()
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise PgmError("malformed header: expected an integer", start)
        values.append(int(data[start:pos]))
    return values, pos


def read_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Parse a P2 or P5 payload into a ``(height, width)`` uint8 raster and maxval."""
    if len(data) < 2 or data[:2] not in (b"P2", b"P5"):
        raise PgmError("not a P2/P5 PGM file", 0)
    magic = data[:2]
    (width, height, maxval), pos = _header_tokens(data, 3, 2)
    if width <= 0 or height <= 0:
        raise PgmError(f"zero dimension {width}x{height}", pos)
    if not 0 < maxval <= 255:
        raise PgmError(f"unsupported maxval {maxval}", pos)
    n = width * height
    if magic == b"P5":
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise PgmError("missing whitespace before raster", pos)
        pos += 1
        if len(data) - pos < n:
            raise PgmError(f"truncated raster: need {n} bytes, have {len(data) - pos}", len(data))
        gray = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).reshape(height, width)
    else:
        tokens = data[pos:].split()
        if len(tokens) < n:
            raise PgmError(f"truncated raster: need {n} values, have {len(tokens)}", len(data))
        try:
            vals = np.array([int(t) for t in tokens[:n]], dtype=np.int64)
        except ValueError:
            raise PgmError("non-numeric raster value", pos) from None
        if vals.min() < 0 or vals.max() > maxval:
            raise PgmError("raster value out of range", pos)
        gray = vals.astype(np.uint8).reshape(height, width)
    if gray.max(initial=0) > maxval:
        raise PgmError("raster value exceeds maxval", pos)
    return gray.copy(), maxval


def write_pgm(gray: np.ndarray, binary: bool = True) -> bytes:
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    if binary:
        return b"P5\n%d %d\n255\n" % (w, h) + gray.tobytes()
    lines = [b"P2", b"%d %d" % (w, h), b"255"]
    lines += [b" ".join(b"%d" % v for v in row) for row in gray]
    return b"\n".join(lines) + b"\n"


def load_pgm(data: bytes, threshold: int = DEFAULT_THRESHOLD) -> BinaryImage:
    """Read a PGM payload and binarize it; gray levels are rescaled to 0-255 first."""
    gray, maxval = read_pgm(data)
    if maxval != 255:
        gray = (gray.astype(np.int64) * 255 + maxval // 2) // maxval
    return binarize(gray, threshold)


def save_pgm(image: BinaryImage, binary: bool = True) -> bytes:
    return write_pgm(image.to_gray(), binary=binary)


def binarize(gray: np.ndarray, threshold: int = DEFAULT_THRESHOLD) -> BinaryImage:
    """Foreground wherever ``gray >= threshold``."""
    return BinaryImage(np.asarray(gray) >= threshold)


# --- regions -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Regions:
    """Foreground components (8-connected) and their holes (4-connected background
    components that do not touch the image border)."""

    count: int
    labels: np.ndarray
    hole_counts: tuple[int, ...]
    hole_labels: np.ndarray
    hole_owner: tuple[int, ...] = field(default=())


def extract_regions(image: BinaryImage) -> Regions:
    fg = image.pixels
    labels, count = kernels.label(fg.astype(np.uint8), 8)
    bg_labels, bg_count = kernels.label((~fg).astype(np.uint8), 4)

    border = np.zeros(bg_count + 1, dtype=bool)
    for edge in (bg_labels[0], bg_labels[-1], bg_labels[:, 0], bg_labels[:, -1]):
        border[edge] = True
    border[0] = True

    # Each enclosed background component is owned by the component of the
    # foreground pixel just above its topmost-leftmost pixel.
    hole_ids = [k for k in range(1, bg_count + 1) if not border[k]]
    remap = np.zeros(bg_count + 1, dtype=np.int32)
    owners = []
    if hole_ids:
        flat = bg_labels.ravel()
        first = np.full(bg_count + 1, -1, dtype=np.int64)
        nz = np.flatnonzero(flat)
        uniq, idx = np.unique(flat[nz], return_index=True)
        first[uniq] = nz[idx]
        for new, k in enumerate(hole_ids, start=1):
            remap[k] = new
            y, x = divmod(int(first[k]), image.width)
            owners.append(int(labels[y - 1, x]))
    hole_labels = remap[bg_labels]
    hole_counts = [0] * count
    for o in owners:
        hole_counts[o - 1] += 1
    return Regions(count, labels, tuple(hole_counts), hole_labels, tuple(owners))


def remove_specks(image: BinaryImage, min_area: int) -> BinaryImage:
    """Drop foreground components and fill enclosed holes smaller than ``min_area`` pixels.

    Isolated pixels flipped by noise would otherwise count as extra objects or
    extra holes. ``min_area <= 1`` returns the image unchanged.
    """
    if min_area <= 1:
        return image
    regions = extract_regions(image)
    px = image.pixels.copy()
    if regions.count:
        sizes = np.bincount(regions.labels.ravel(), minlength=regions.count + 1)
        small = sizes < min_area
        small[0] = False
        px[small[regions.labels]] = False
    if regions.hole_owner:
        sizes = np.bincount(regions.hole_labels.ravel(), minlength=len(regions.hole_owner) + 1)
        small = sizes < min_area
        small[0] = False
        px[small[regions.hole_labels]] = True
    return BinaryImage(px)


# --- contours -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Contour:
    """Closed 8-connected pixel chain; ``points`` is an ``(n, 2)`` array of (x, y)."""

    points: np.ndarray
    kind: str = "boundary"

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.int64).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, Contour):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ContourSet:
    boundary: Contour
    holes: tuple[Contour, ...]
    centroid: tuple[float, float]
    # Exact (sum_x, sum_y, pixel_count) of the object area.
    area_sums: tuple[int, int, int]

    @property
    def hole_count(self) -> int:
        return len(self.holes)


def _topmost_leftmost(mask: np.ndarray) -> tuple[int, int]:
    idx = int(np.flatnonzero(mask.ravel())[0])
    y, x = divmod(idx, mask.shape[1])
    return x, y


def _roll_to_topmost_leftmost(points: np.ndarray) -> np.ndarray:
    key = points[:, 1] * (points[:, 0].max() + 1) + points[:, 0]
    return np.roll(points, -int(np.argmin(key)), axis=0)


def trace_contours(image: BinaryImage) -> ContourSet:
    """Trace the single object's boundary (counter-clockwise as displayed) and its
    hole contours (clockwise), each starting at its topmost-leftmost pixel."""
    regions = extract_regions(image)
    if regions.count == 0:
        raise NoObjectError("image has no foreground pixels")
    if regions.count > 1:
        raise MultipleObjectsError(f"expected one object, found {regions.count}")
    mask = image.pixels.astype(np.uint8)
    ys, xs = np.nonzero(mask)
    n = len(xs)
    if n < 4:
        raise DegenerateContourError(f"object has only {n} pixels")
    sums = (int(xs.sum()), int(ys.sum()), n)

    sx, sy = _topmost_leftmost(mask)
    cw = kernels.moore_trace(mask, sx, sy, sx - 1, sy)
    boundary = np.concatenate([cw[:1], cw[:0:-1]])
    if len(boundary) < 4:
        raise DegenerateContourError(f"boundary has only {len(boundary)} points")

    holes = []
    for k in range(1, int(regions.hole_labels.max(initial=0)) + 1):
        hx, hy = _topmost_leftmost(regions.hole_labels == k)
        ccw = kernels.moore_trace(mask, hx, hy - 1, hx, hy)
        pts = np.concatenate([ccw[:1], ccw[:0:-1]])
        holes.append(Contour(_roll_to_topmost_leftmost(pts), "hole"))

    centroid = (sums[0] / n, sums[1] / n)
    return ContourSet(Contour(boundary, "boundary"), tuple(holes), centroid, sums)
