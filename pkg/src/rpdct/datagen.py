"""Seeded synthetic shape groups, analytic pose, noise and blur.

Six groups of four classes each. Classes of a group share one global outline
and differ by local alterations (notches, bumps, trimmed teeth). Outlines are
star-shaped polar curves; holes are circles. Posing transforms the vector
outline before rasterization, so integer translation commutes exactly with
rendering and quarter-turn rotations are exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from rpdct.imaging import BinaryImage, ImageError, save_pgm

CANVAS = 256
GROUPS = (1, 2, 3, 4, 5, 6)
CLASSES = (1, 2, 3, 4)
DEFAULT_GROUP = 6
MANIFEST = "manifest.jsonl"
MANIFEST_SCHEMA = 1
_OUTLINE_SAMPLES = 720


class PoseError(ImageError):
    """Posed shape does not fit the canvas."""


# --- shape families ---------------------------------------------------------------

def _window(theta: np.ndarray, center_deg: float, half_width_deg: float) -> np.ndarray:
    """Raised-cosine window in angle, 1 at the center, 0 beyond the half width."""
    d = np.angle(np.exp(1j * (theta - math.radians(center_deg))))
    w = math.radians(half_width_deg)
    return np.where(np.abs(d) < w, 0.5 * (1.0 + np.cos(np.pi * d / w)), 0.0)


def _superellipse(theta: np.ndarray, a: float, b: float, p: float) -> np.ndarray:
    c, s = np.abs(np.cos(theta)), np.abs(np.sin(theta))
    return (np.power(c / a, p) + np.power(s / b, p)) ** (-1.0 / p)


@dataclass(frozen=True)
class Alteration:
    """Local radial change: ``depth`` pixels (negative for a notch) over a
    raised-cosine window of ``half_width`` degrees centred at ``angle``."""

    angle: float
    half_width: float
    depth: float


@dataclass(frozen=True)
class ShapeSpec:
    group: int
    cls: int
    family: str
    alterations: tuple[Alteration, ...] = ()
    # holes as (x, y, radius) in shape coordinates
    holes: tuple[tuple[float, float, float], ...] = ()


def _base_radius(family: str, theta: np.ndarray) -> np.ndarray:
    if family == "plate":
        return _superellipse(theta, 80.0, 80.0, 4.0)
    if family == "gear":
        return 68.0 + 9.0 * np.tanh(3.0 * np.cos(12 * theta))
    if family == "cam":
        return 62.0 + 16.0 * np.cos(theta) + 5.0 * np.cos(2 * theta)
    if family == "flange":
        return 70.0 + 11.0 * np.cos(3 * theta)
    if family == "bracket":
        return _superellipse(theta, 88.0, 60.0, 2.5) + 6.0 * np.cos(3 * theta)
    if family == "tool":
        return _superellipse(theta, 96.0, 52.0, 2.2)
    raise ValueError(f"unknown family {family!r}")


_A = Alteration
# Per group: family, holes, and the four classes' alterations.
_GROUP_TABLE: dict[int, tuple[str, tuple, tuple]] = {
    1: ("plate", (), (
        (),
        (_A(0, 14, -14),),
        (_A(0, 14, -14), _A(180, 14, -14)),
        (_A(45, 12, -16),),
    )),
    2: ("gear", ((0.0, 0.0, 20.0),), (
        (),
        (_A(0, 12, -16),),
        (_A(0, 12, -16), _A(30, 12, -16)),
        (_A(0, 10, 10),),
    )),
    3: ("cam", ((22.0, 0.0, 14.0),), (
        (),
        (_A(90, 16, -12),),
        (_A(-90, 16, -12),),
        (_A(180, 18, -12),),
    )),
    4: ("flange", ((34.0, 0.0, 12.0), (-20.0, 24.0, 9.0)), (
        (),
        (_A(0, 14, -12),),
        (_A(120, 14, -12),),
        (_A(240, 14, -12),),
    )),
    5: ("bracket", ((40.0, 0.0, 13.0), (-36.0, -10.0, 9.0)), (
        (),
        (_A(90, 18, -12),),
        (_A(0, 12, -14),),
        (_A(90, 18, -12), _A(0, 12, -14)),
    )),
    6: ("tool", ((52.0, 0.0, 13.0),), (
        (),
        (_A(0, 12, -16),),
        (_A(60, 16, -10),),
        (_A(0, 12, -16), _A(60, 16, -10)),
    )),
}


def shape_spec(group: int, cls: int) -> ShapeSpec:
    if group not in _GROUP_TABLE or cls not in CLASSES:
        raise ValueError(f"no shape for group {group}, class {cls}")
    family, holes, classes = _GROUP_TABLE[group]
    return ShapeSpec(group, cls, family, classes[cls - 1], holes)


def outline(spec: ShapeSpec) -> list[np.ndarray]:
    """Closed rings in shape coordinates: the outer outline, then each hole."""
    theta = np.arange(_OUTLINE_SAMPLES) * (2 * np.pi / _OUTLINE_SAMPLES)
    r = _base_radius(spec.family, theta)
    for alt in spec.alterations:
        r = r + alt.depth * _window(theta, alt.angle, alt.half_width)
    if np.any(r <= 5.0):
        raise ValueError(f"degenerate outline for group {spec.group} class {spec.cls}")
    rings = [np.column_stack([r * np.cos(theta), r * np.sin(theta)])]
    for hx, hy, hr in spec.holes:
        t = np.arange(180) * (2 * np.pi / 180)
        rings.append(np.column_stack([hx + hr * np.cos(t), hy + hr * np.sin(t)]))
    return rings


# --- rasterization ------------------------------------------------------------------

def rasterize(rings: list[np.ndarray], width: int = CANVAS, height: int = CANVAS) -> np.ndarray:
    """Even-odd fill of pixel centres; shape coordinates are centred on the canvas.

    Pixel ``(col, row)`` has centre ``(col - (width-1)/2, row - (height-1)/2)``.
    """
    x0s, y0s, x1s, y1s = [], [], [], []
    for ring in rings:
        nxt = np.roll(ring, -1, axis=0)
        x0s.append(ring[:, 0])
        y0s.append(ring[:, 1])
        x1s.append(nxt[:, 0])
        y1s.append(nxt[:, 1])
    x0, y0 = np.concatenate(x0s), np.concatenate(y0s)
    x1, y1 = np.concatenate(x1s), np.concatenate(y1s)
    xs = np.arange(width) - (width - 1) / 2.0
    mask = np.zeros((height, width), dtype=bool)
    ymin, ymax = min(y0.min(), y1.min()), max(y0.max(), y1.max())
    cy = (height - 1) / 2.0
    row_lo = max(0, math.floor(ymin + cy))
    row_hi = min(height - 1, math.ceil(ymax + cy))
    for row in range(row_lo, row_hi + 1):
        y = row - cy
        hit = (y0 <= y) != (y1 <= y)
        if not hit.any():
            continue
        cross = x0[hit] + (y - y0[hit]) * (x1[hit] - x0[hit]) / (y1[hit] - y0[hit])
        cross.sort()
        mask[row] = np.searchsorted(cross, xs, side="left") % 2 == 1
    return mask


@dataclass(frozen=True)
class Pose:
    rotation: float = 0.0  # degrees, counter-clockwise as displayed
    scale: float = 1.0
    tx: int = 0
    ty: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if int(self.tx) != self.tx or int(self.ty) != self.ty:
            raise ValueError("translation must be whole pixels")


def _rotation(deg: float) -> tuple[float, float]:
    q, rem = divmod(deg, 90.0)
    if rem == 0.0:
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[int(q) % 4]
    a = math.radians(deg)
    return math.cos(a), math.sin(a)


def pose_rings(rings: list[np.ndarray], pose: Pose) -> list[np.ndarray]:
    c, s = _rotation(pose.rotation)
    # y grows downward on screen, so a displayed counter-clockwise turn is
    # (x, y) -> (x c + y s, -x s + y c).
    m = pose.scale * np.array([[c, -s], [s, c]])
    return [ring @ m for ring in rings]


def _place(mask: np.ndarray, tx: int, ty: int) -> np.ndarray:
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if len(xs) and (xs.min() + tx < 1 or ys.min() + ty < 1 or xs.max() + tx > w - 2 or ys.max() + ty > h - 2):
        raise PoseError("posed shape touches or leaves the canvas")
    out = np.zeros_like(mask)
    out[ys + ty, xs + tx] = True
    return out


def render(spec: ShapeSpec, pose: Pose = Pose(), size: int = CANVAS) -> BinaryImage:
    """Rasterize ``spec`` at ``pose``; the identity pose gives the base shape."""
    mask = rasterize(pose_rings(outline(spec), pose), size, size)
    return BinaryImage(_place(mask, int(pose.tx), int(pose.ty)))


def gen_base_shape(spec: ShapeSpec, size: int = CANVAS) -> BinaryImage:
    return render(spec, Pose(), size)


def apply_pose(spec: ShapeSpec, pose: Pose, size: int = CANVAS) -> BinaryImage:
    return render(spec, pose, size)


# --- degradations ---------------------------------------------------------------------

FOREGROUND_POWER = 255.0 ** 2


def noise_sigma(snr_db: float, power: float = FOREGROUND_POWER) -> float:
    """Noise std giving ``10 log10(power / sigma^2) = snr_db``."""
    if not snr_db > 0:
        raise ValueError("snr_db must be positive")
    return math.sqrt(power / 10.0 ** (snr_db / 10.0))


def noisy_raster(image: BinaryImage, snr_db: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    sigma = noise_sigma(snr_db)
    noise = rng.normal(0.0, sigma, size=image.pixels.shape)
    return np.where(image.pixels, 255.0, 0.0) + noise


def add_gaussian_noise(image: BinaryImage, snr_db: float, seed: int) -> BinaryImage:
    return BinaryImage(noisy_raster(image, snr_db, seed) >= 128.0)


def blur_radius(fraction: float, width: int, height: int) -> int:
    if not 0 < fraction < 1:
        raise ValueError("blur fraction must be in (0, 1)")
    return int(round(fraction * min(width, height) / 2))


def add_blur(image: BinaryImage, fraction: float) -> BinaryImage:
    """Box blur of the {0, 255} raster, re-binarized at 128, in exact integers."""
    r = blur_radius(fraction, image.width, image.height)
    if r == 0:
        return image
    k = 2 * r + 1
    padded = np.pad(image.pixels.astype(np.int64), r)
    csum = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1), dtype=np.int64)
    csum[1:, 1:] = padded.cumsum(0).cumsum(1)
    h, w = image.pixels.shape
    box = csum[k:k + h, k:k + w] - csum[:h, k:k + w] - csum[k:k + h, :w] + csum[:h, :w]
    # mean >= 128 on the 0..255 scale
    return BinaryImage(box * 255 >= 128 * k * k)


# --- datasets ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Exemplar:
    group: int
    cls: int
    exemplar: int
    split: str
    pose: Pose
    snr_db: float | None = None
    blur: float | None = None
    seed: int = 0
    base: bool = False
    file: str = ""

    def render(self, size: int = CANVAS) -> BinaryImage:
        img = render(shape_spec(self.group, self.cls), self.pose, size)
        if self.blur:
            img = add_blur(img, self.blur)
        if self.snr_db is not None:
            img = add_gaussian_noise(img, self.snr_db, self.seed)
        return img

    def to_record(self) -> dict:
        rec = {"schema": MANIFEST_SCHEMA, **asdict(self)}
        rec["class"] = rec.pop("cls")
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> Exemplar:
        return cls(
            group=int(rec["group"]),
            cls=int(rec["class"]),
            exemplar=int(rec["exemplar"]),
            split=rec["split"],
            pose=Pose(**rec["pose"]),
            snr_db=rec.get("snr_db"),
            blur=rec.get("blur"),
            seed=int(rec.get("seed", 0)),
            base=bool(rec.get("base", False)),
            file=rec.get("file", ""),
        )


@dataclass(frozen=True)
class PoseRange:
    rotation: tuple[float, float] = (0.0, 360.0)
    scale: tuple[float, float] = (0.8, 1.2)
    shift: int = 16

    def draw(self, rng: np.random.Generator, extent: float | None = None, size: int = CANVAS) -> Pose:
        """Random pose; with ``extent`` (the shape's largest radius) the shift
        range shrinks as needed so the scaled shape stays inside the canvas."""
        rotation = float(rng.uniform(*self.rotation))
        scale = float(rng.uniform(*self.scale))
        shift = self.shift
        if extent is not None:
            room = math.floor((size - 1) / 2.0 - 2.0 - extent * scale)
            shift = max(0, min(shift, room))
        return Pose(
            rotation=rotation,
            scale=scale,
            tx=int(rng.integers(-shift, shift + 1)),
            ty=int(rng.integers(-shift, shift + 1)),
        )


def shape_extent(spec: ShapeSpec) -> float:
    """Largest distance of any outline point from the shape origin."""
    return float(max(np.hypot(r[:, 0], r[:, 1]).max() for r in outline(spec)))


_SPLIT_CODES = {"train": 0, "test": 1, "runs": 2}


def _rng(master_seed: int, group: int, split: str, cls: int, idx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(group, _SPLIT_CODES[split], cls, idx))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class DatasetPlan:
    group: int = DEFAULT_GROUP
    train: int = 20
    test: int = 50
    noise: tuple[float, ...] = (20.0, 25.0, 30.0)
    blur: float | None = 0.05
    seed: int = 0
    base_count: int = 5
    base_snr_db: float = 25.0
    poses: PoseRange = field(default_factory=PoseRange)


def plan_exemplars(plan: DatasetPlan) -> list[Exemplar]:
    """Train and test exemplar descriptions for every class of ``plan.group``.

    The first ``base_count`` training exemplars of a class are noisy copies of
    the unposed base shape. Remaining training exemplars are posed, with every
    other one degraded; test exemplars are posed and cycle through clean, each
    noise level and blur.
    """
    if plan.train < 1 or plan.test < 1:
        raise ValueError("train and test counts must be at least 1")
    degradations: list[tuple[float | None, float | None]] = [(None, None)]
    degradations += [(snr, None) for snr in plan.noise]
    if plan.blur:
        degradations.append((None, plan.blur))
    out = []
    for cls in CLASSES:
        extent = shape_extent(shape_spec(plan.group, cls))
        for i in range(plan.train):
            rng = _rng(plan.seed, plan.group, "train", cls, i)
            seed = int(rng.integers(2**31))
            if i < plan.base_count:
                out.append(Exemplar(plan.group, cls, i, "train", Pose(), plan.base_snr_db, None, seed, True))
                continue
            pose = plan.poses.draw(rng, extent)
            snr, blur = degradations[(i - plan.base_count) // 2 % len(degradations)] if i % 2 else (None, None)
            out.append(Exemplar(plan.group, cls, i, "train", pose, snr, blur, seed))
        for i in range(plan.test):
            rng = _rng(plan.seed, plan.group, "test", cls, i)
            seed = int(rng.integers(2**31))
            pose = plan.poses.draw(rng, extent)
            snr, blur = degradations[i % len(degradations)]
            out.append(Exemplar(plan.group, cls, i, "test", pose, snr, blur, seed))
    return out


def plan_noise_runs(group: int, runs: int, levels: tuple[float, ...], seed: int,
                    poses: PoseRange = PoseRange()) -> list[Exemplar]:
    """``runs`` independent posed draws per noise level, classes cycling."""
    out = []
    for li, snr in enumerate(levels):
        for i in range(runs):
            idx = li * runs + i
            cls = CLASSES[i % len(CLASSES)]
            rng = _rng(seed, group, "runs", cls, idx)
            noise_seed = int(rng.integers(2**31))
            pose = poses.draw(rng, shape_extent(shape_spec(group, cls)))
            out.append(Exemplar(group, cls, idx, "runs", pose, float(snr), None, noise_seed))
    return out


def write_dataset(exemplars: list[Exemplar], out_dir: str | Path) -> Path:
    """Render every exemplar to ``<split>/g<G>_c<C>_<id>.pgm`` plus a manifest."""
    out_dir = Path(out_dir)
    lines = []
    for ex in exemplars:
        rel = f"{ex.split}/g{ex.group}_c{ex.cls}_{ex.exemplar:04d}.pgm"
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(save_pgm(ex.render()))
        rec = ex.to_record()
        rec["file"] = rel
        lines.append(json.dumps(rec, sort_keys=True))
    manifest = out_dir / MANIFEST
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path: str | Path) -> list[Exemplar]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            if rec.get("schema") != MANIFEST_SCHEMA:
                raise ValueError(f"unsupported manifest schema {rec.get('schema')!r}")
            out.append(Exemplar.from_record(rec))
    return out
