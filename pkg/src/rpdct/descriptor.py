"""Radial profiles, cosine/sine spectra, shift model, normalization and bands.

The transform pair uses a uniform ``sqrt(2/N)`` factor at every frequency,
including ``u = 0``, so the shift relation between the cosine and sine
spectra holds as written::

    x(u) = sqrt(2/N) * sum_j r(j) cos((2j+1) u pi / 2N)
    s(u) = sqrt(2/N) * sum_j r(j) sin((2j+1) u pi / 2N)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from rpdct.imaging import ContourSet

BOUNDARY = "boundary"


def hole_role(k: int) -> str:
    """Role name of the k-th hole in marker order, counting from 1."""
    return f"hole{k}"


class DescriptorError(ValueError):
    pass


class DegenerateSpectrumError(DescriptorError):
    pass


class HoleOrderingError(DescriptorError):
    pass


@dataclass(frozen=True)
class DescriptorConfig:
    boundary_length: int = 64
    hole_length: int = 32
    max_length: int = 1024
    max_denominator: int = 64
    # "arc": contour points re-spaced uniformly in perimeter length before
    # resampling (diagonal chain steps count sqrt(2)); "index": point order only
    parameterization: str = "arc"
    # band homogeneity: max sigma / max(min sigma, sigma_floor) <= tau
    tau: float = 10.0
    min_band_width: int = 4
    sigma_floor: float = 1e-6
    marker_eps: float = 1e-6

    def __post_init__(self):
        for n in (self.boundary_length, self.hole_length):
            if not 8 <= n <= self.max_length:
                raise DescriptorError(f"profile length {n} outside [8, {self.max_length}]")
        if self.parameterization not in ("arc", "index"):
            raise DescriptorError(f"unknown parameterization {self.parameterization!r}")

    def length(self, role: str) -> int:
        return self.boundary_length if role == BOUNDARY else self.hole_length


# --- profiles -------------------------------------------------------------------

def radial_profile(points: np.ndarray, centroid: tuple[float, float]) -> np.ndarray:
    """Distance from ``centroid`` to every contour point, in traced order."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.hypot(centroid[0] - pts[:, 0], centroid[1] - pts[:, 1])


def exact_radial_profile(points: np.ndarray, area_sums: tuple[int, int, int]) -> np.ndarray:
    """Radial profile about the area centroid ``(sum_x/n, sum_y/n)``.

    Works in integers until the final square root, so translating the object
    by whole pixels gives bit-identical output.
    """
    sx, sy, n = area_sums
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    dx = n * pts[:, 0] - sx
    dy = n * pts[:, 1] - sy
    return np.sqrt((dx * dx + dy * dy).astype(float)) / n


def arc_length_profile(profile: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Re-sample a closed contour's profile at ``n`` points equally spaced in
    perimeter length, where each chain step has its Euclidean length."""
    r = np.asarray(profile, dtype=float)
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    steps = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    diag = (steps[:, 0] != 0) & (steps[:, 1] != 0)
    pos = np.concatenate([[0.0], np.cumsum(np.where(diag, np.sqrt(2.0), 1.0))])
    n = len(r)
    return np.interp(np.arange(n) * (pos[-1] / n), pos, np.append(r, r[0]))


def _cyclic_interp(profile: np.ndarray, positions: np.ndarray) -> np.ndarray:
    n = len(profile)
    lo = np.floor(positions).astype(np.int64)
    frac = positions - lo
    lo %= n
    hi = (lo + 1) % n
    return profile[lo] * (1.0 - frac) + profile[hi] * frac


def resample(profile: np.ndarray, target_length: int, max_denominator: int = 64) -> np.ndarray:
    """Rational up/down resampling of a cyclic profile to ``target_length`` samples.

    ``target_length / n`` is approximated by ``a/b`` with ``b <= max_denominator``;
    the profile is linearly interpolated ``a`` times finer and every ``b``-th
    sample kept. A final cyclic linear resample fixes the length exactly.
    """
    profile = np.asarray(profile, dtype=float)
    n = len(profile)
    if n < 2:
        raise DescriptorError(f"profile needs at least 2 samples, got {n}")
    if n == target_length:
        return profile.copy()
    ratio = Fraction(target_length, n).limit_denominator(max_denominator)
    up, down = ratio.numerator, ratio.denominator
    fine = _cyclic_interp(profile, np.arange(n * up) / up)
    coarse = fine[::down]
    if len(coarse) == target_length:
        return coarse
    m = len(coarse)
    return _cyclic_interp(coarse, np.arange(target_length) * (m / target_length))


# --- transforms -----------------------------------------------------------------

@lru_cache(maxsize=32)
def _kernel(n: int, kind: str) -> np.ndarray:
    u = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    arg = (2 * j + 1) * u * np.pi / (2 * n)
    mat = np.sqrt(2.0 / n) * (np.cos(arg) if kind == "cos" else np.sin(arg))
    if kind == "sin":
        mat[0] = 0.0
    mat.setflags(write=False)
    return mat


def dct_forward(profile: np.ndarray) -> np.ndarray:
    r = np.asarray(profile, dtype=float)
    return _kernel(len(r), "cos") @ r


def dst_forward(profile: np.ndarray) -> np.ndarray:
    """Sine companion of :func:`dct_forward`; the ``u = 0`` term is exactly 0."""
    r = np.asarray(profile, dtype=float)
    return _kernel(len(r), "sin") @ r


@dataclass(frozen=True, eq=False)
class Spectrum:
    coeffs: np.ndarray
    sine_coeffs: np.ndarray | None = None

    def __len__(self):
        return len(self.coeffs)


def spectrum(profile: np.ndarray) -> Spectrum:
    return Spectrum(dct_forward(profile), dst_forward(profile))


def shift_spectrum(base: Spectrum, h: int) -> np.ndarray:
    """Predicted cosine spectrum after cyclically shifting the profile by ``h``.

    Evaluates ``cos(b) x(u) - sin(b) s(u)`` with ``b = h u pi / N``; the shift
    direction is ``r_h(j) = r((j - h) mod N)``, i.e. ``np.roll(r, h)``. This is
    exact for even ``u`` only; wrapped samples contribute an extra
    ``(-1)^u - 1`` term at odd ``u``.
    """
    if base.sine_coeffs is None:
        raise DescriptorError("shift model needs the sine spectrum")
    n = len(base.coeffs)
    if not 0 <= h < n:
        raise DescriptorError(f"shift {h} outside [0, {n})")
    if h == 0:
        return base.coeffs.copy()
    beta = h * np.arange(n) * np.pi / n
    return np.cos(beta) * base.coeffs - np.sin(beta) * base.sine_coeffs


def shift_ratio(base: Spectrum, h: int) -> np.ndarray:
    """Multiplicative form ``a(u, h) = cos(b) - sin(b) s(u)/x(u)``; NaN where x(u) = 0."""
    n = len(base.coeffs)
    beta = h * np.arange(n) * np.pi / n
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = base.sine_coeffs / base.coeffs
    ratio = np.where(base.coeffs == 0, np.nan, ratio)
    return np.cos(beta) - np.sin(beta) * ratio


def normalize_amplitude(coeffs: np.ndarray) -> np.ndarray:
    """Divide by the Euclidean norm."""
    x = np.asarray(coeffs, dtype=float)
    norm = np.sqrt(np.sum(x * x))
    if not norm > 0 or not np.isfinite(norm):
        raise DegenerateSpectrumError("cannot normalize an all-zero spectrum")
    return x / norm


def b_transform(coeffs: np.ndarray) -> np.ndarray:
    """Signed square root, used only for plotting spectra."""
    x = np.asarray(coeffs, dtype=float)
    return np.sign(x) * np.sqrt(np.abs(x))


# --- hole ordering ----------------------------------------------------------------

def order_holes(hole_spectra: list[np.ndarray], eps: float = 1e-6) -> list[int]:
    """Indices of the holes sorted by marker value ('first', 'second', ...).

    The marker of a hole is its coefficient at the lowest frequency where the
    compared spectra are not all equal within ``eps``. Ties are broken
    recursively at higher frequencies.
    """
    spectra = [np.asarray(s, dtype=float) for s in hole_spectra]
    if not spectra:
        return []
    n = len(spectra[0])
    if any(len(s) != n for s in spectra):
        raise DescriptorError("hole spectra must have equal length")

    def sort_group(group: list[int], u0: int) -> list[int]:
        if len(group) == 1:
            return group
        for u in range(u0, n):
            vals = np.array([spectra[i][u] for i in group])
            if vals.max() - vals.min() > eps:
                break
        else:
            raise HoleOrderingError(f"holes {group} have indistinguishable spectra")
        ranked = sorted(group, key=lambda i: (spectra[i][u], i))
        # Split into runs of equal markers and resolve each run further.
        out, run = [], [ranked[0]]
        for i in ranked[1:]:
            if spectra[i][u] - spectra[run[0]][u] <= eps:
                run.append(i)
            else:
                out += sort_group(run, u + 1)
                run = [i]
        out += sort_group(run, u + 1)
        return out

    return sort_group(list(range(len(spectra))), 0)


# --- bands ------------------------------------------------------------------------

def segment_bands(
    spectra: np.ndarray,
    tau: float = 10.0,
    min_width: int = 4,
    sigma_floor: float = 1e-6,
) -> tuple[int, ...]:
    """Greedy left-to-right split of coefficient indices into homogeneous bands.

    ``spectra`` is ``(samples, N)``. A band is homogeneous while the ratio of the
    largest to the (floored) smallest per-coefficient standard deviation in it
    stays within ``tau``. A band is only closed once it is ``min_width`` wide,
    and a short trailing band is merged into its predecessor. Returns the cut
    indices (band starts other than 0).
    """
    spectra = np.asarray(spectra, dtype=float)
    if spectra.ndim != 2 or spectra.shape[0] < 2:
        raise DescriptorError("band segmentation needs at least 2 spectra")
    sigma = spectra.std(axis=0, ddof=1)
    n = len(sigma)
    cuts = []
    start = 0
    hi = lo = sigma[0]
    for u in range(1, n):
        c_hi = max(hi, sigma[u])
        c_lo = min(lo, sigma[u])
        if c_hi / max(c_lo, sigma_floor) > tau and u - start >= min_width:
            cuts.append(u)
            start = u
            hi = lo = sigma[u]
        else:
            hi, lo = c_hi, c_lo
    if cuts and n - cuts[-1] < min_width:
        cuts.pop()
    return tuple(cuts)


@dataclass(frozen=True)
class BandPartition:
    """Band cuts per contour role; roles are ordered boundary, hole1, hole2, ..."""

    lengths: dict[str, int]
    cuts: dict[str, tuple[int, ...]] = field(default_factory=dict)

    @property
    def roles(self) -> list[str]:
        return list(self.lengths)

    def bands(self, role: str) -> list[tuple[int, int]]:
        edges = [0, *self.cuts.get(role, ()), self.lengths[role]]
        return list(zip(edges[:-1], edges[1:]))

    def band_keys(self) -> list[tuple[str, int]]:
        """(role, band index) in the fixed feature order."""
        return [(role, b) for role in self.roles for b in range(len(self.bands(role)))]

    def band_width(self, role: str, band: int) -> int:
        lo, hi = self.bands(role)[band]
        return hi - lo

    def to_dict(self) -> dict:
        return {"lengths": dict(self.lengths), "cuts": {r: list(c) for r, c in self.cuts.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> BandPartition:
        lengths = {str(r): int(n) for r, n in d["lengths"].items()}
        cuts = {str(r): tuple(int(c) for c in cs) for r, cs in d["cuts"].items()}
        return cls(lengths, cuts)


def fit_partition(role_spectra: dict[str, np.ndarray], config: DescriptorConfig) -> BandPartition:
    lengths, cuts = {}, {}
    for role, spectra in role_spectra.items():
        spectra = np.asarray(spectra)
        lengths[role] = spectra.shape[1]
        cuts[role] = segment_bands(spectra, config.tau, config.min_band_width, config.sigma_floor)
    return BandPartition(lengths, cuts)


def apply_bands(coeffs: np.ndarray, partition: BandPartition, role: str) -> list[np.ndarray]:
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coeffs) != partition.lengths[role]:
        raise DescriptorError(
            f"{role} spectrum has {len(coeffs)} coefficients, partition expects {partition.lengths[role]}"
        )
    return [coeffs[lo:hi].copy() for lo, hi in partition.bands(role)]


# --- whole-object descriptor ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObjectDescriptor:
    """Per-role resampled profiles, raw spectra and normalized spectra of one object.
    Holes are already in marker order."""

    profiles: dict[str, np.ndarray]
    spectra: dict[str, Spectrum]
    normalized: dict[str, np.ndarray]

    @property
    def roles(self) -> list[str]:
        return list(self.normalized)


def describe(contours: ContourSet, config: DescriptorConfig = DescriptorConfig()) -> ObjectDescriptor:
    """Contours to ordered, resampled, transformed and normalized role spectra."""
    raw = [(BOUNDARY, contours.boundary)] + [("hole", h) for h in contours.holes]
    profiles, spectra, normalized = [], [], []
    for kind, contour in raw:
        prof = exact_radial_profile(contour.points, contours.area_sums)
        if config.parameterization == "arc":
            prof = arc_length_profile(prof, contour.points)
        n = config.length(kind)
        prof = resample(prof, n, config.max_denominator)
        spec = spectrum(prof)
        profiles.append(prof)
        spectra.append(spec)
        normalized.append(normalize_amplitude(spec.coeffs))

    # Markers come from the raw hole spectra scaled by the boundary spectrum
    # norm: distance-to-centroid information survives and ordering is
    # scale-free.
    scale = np.sqrt(np.sum(spectra[0].coeffs ** 2))
    markers = [s.coeffs / scale for s in spectra[1:]]
    order = [0] + [1 + i for i in order_holes(markers, config.marker_eps)]
    roles = [BOUNDARY] + [hole_role(k) for k in range(1, len(order))]
    return ObjectDescriptor(
        {r: profiles[i] for r, i in zip(roles, order)},
        {r: spectra[i] for r, i in zip(roles, order)},
        {r: normalized[i] for r, i in zip(roles, order)},
    )
