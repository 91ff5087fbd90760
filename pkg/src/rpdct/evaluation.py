"""Class overlap, recognition rates, mismatch tables, shift-model statistics
and report emission."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from rpdct.descriptor import BOUNDARY, b_transform, dct_forward, shift_spectrum, spectrum
from rpdct.imaging import BinaryImage, ImageError
from rpdct.structure import RecognitionModel, image_bands, recognize

REPORT_SCHEMA = 1
SIGMA_FLOOR = 1e-9
REJECTED = -1
OVERLAP_HEADER = ["point", "method", "k", "l", "s_kl"]
FIG4_HEADER = ["u", "base", "rotated", "filtered"]
FIG5_HEADER = ["u", "h", "mean_abs_dev", "a_var"]


class EvaluationError(ValueError):
    pass


# --- overlap -----------------------------------------------------------------------

def gaussian_overlap(mu1: float, s1: float, mu2: float, s2: float) -> float:
    """Overlapping coefficient of two normal densities, ``integral of min(f1, f2)``."""
    s1, s2 = max(s1, SIGMA_FLOOR), max(s2, SIGMA_FLOOR)
    if s1 == s2:
        return float(2.0 * norm.cdf(-abs(mu1 - mu2) / (2.0 * s1)))
    # Densities cross where a x^2 + b x + c = 0.
    a = 1.0 / s2**2 - 1.0 / s1**2
    b = 2.0 * (mu1 / s1**2 - mu2 / s2**2)
    c = mu2**2 / s2**2 - mu1**2 / s1**2 + 2.0 * math.log(s2 / s1)
    disc = max(b * b - 4.0 * a * c, 0.0)
    r = sorted(((-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a)))
    # Between the roots the narrower density is on top, so the minimum there
    # is the wider one; outside the roots it is the narrower one.
    wide, narrow = ((mu1, s1), (mu2, s2)) if s1 > s2 else ((mu2, s2), (mu1, s1))

    def mass(mu, s, lo, hi):
        return norm.cdf((hi - mu) / s) - norm.cdf((lo - mu) / s)

    inner = mass(*wide, r[0], r[1])
    outer = mass(*narrow, -np.inf, r[0]) + mass(*narrow, r[1], np.inf)
    return float(min(max(inner + outer, 0.0), 1.0))


def _check_sets(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise EvaluationError(f"dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise EvaluationError("overlap needs at least 2 vectors per class")
    return a, b


def componentwise_overlap(vectors_k, vectors_l) -> float:
    """Mean over components of the per-component Gaussian overlap."""
    a, b = _check_sets(vectors_k, vectors_l)
    ma, mb = a.mean(0), b.mean(0)
    sa, sb = a.std(0, ddof=1), b.std(0, ddof=1)
    return float(np.mean([gaussian_overlap(ma[u], sa[u], mb[u], sb[u]) for u in range(a.shape[1])]))


def overlap_degree(vectors_k, vectors_l, method: str = "projection") -> float:
    """Degree of overlap S_kl in [0, 1] between two classes' vector samples.

    ``projection`` fits 1-D Gaussians to both samples projected onto the
    direction joining the class means, so components that carry no class
    difference do not count as overlap. ``componentwise`` averages the
    per-component overlap instead. Both agree for 1-D data.
    """
    if method == "componentwise":
        return componentwise_overlap(vectors_k, vectors_l)
    if method != "projection":
        raise EvaluationError(f"unknown overlap method {method!r}")
    a, b = _check_sets(vectors_k, vectors_l)
    d = a.mean(0) - b.mean(0)
    length = float(np.linalg.norm(d))
    if length == 0.0:
        return 1.0
    pa, pb = a @ (d / length), b @ (d / length)
    return gaussian_overlap(pa.mean(), pa.std(ddof=1), pb.mean(), pb.std(ddof=1))


def overlap_matrix(vectors: dict[str, np.ndarray], method: str = "projection") -> dict[tuple[str, str], float]:
    labels = sorted(vectors)
    return {
        (k, l): overlap_degree(vectors[k], vectors[l], method)
        for i, k in enumerate(labels) for l in labels[i + 1:]
    }


# --- rates -------------------------------------------------------------------------

def recognition_rate(predictions, labels, class_count: int | None = None) -> tuple[float, np.ndarray]:
    """Fraction correct and confusion matrix (rows: true class, columns: predicted).

    Rejected items (prediction -1) count as errors and land in an extra last column.
    """
    p = np.asarray(predictions, dtype=int)
    t = np.asarray(labels, dtype=int)
    if len(p) != len(t):
        raise EvaluationError("predictions and labels differ in length")
    if len(p) == 0:
        raise EvaluationError("no predictions")
    m = class_count if class_count is not None else int(max(t.max(), p.max())) + 1
    conf = np.zeros((m, m + 1), dtype=int)
    for pi, ti in zip(p, t):
        conf[ti, pi if pi >= 0 else m] += 1
    if not conf[:, m].any():
        conf = conf[:, :m]
    return float(np.mean(p == t)), conf


def majority_vote(band_votes, class_count: int) -> int:
    """Most frequent per-band class; ties go to the lowest class index."""
    return int(np.argmax(np.bincount(np.asarray(band_votes, dtype=int), minlength=class_count)))


def mismatch_table(levels, correct) -> dict[float, int]:
    """Mismatch count per noise level, levels in ascending order."""
    out: dict[float, int] = {}
    for lv, ok in zip(levels, correct):
        out[lv] = out.get(lv, 0) + (0 if ok else 1)
    return dict(sorted(out.items()))


# --- shift model statistics --------------------------------------------------------

def shift_deviation(profiles: np.ndarray, shifts=None) -> np.ndarray:
    """``|predicted - direct|`` per (profile, h, u) for cyclic profile shifts.

    The direct spectrum transforms ``np.roll(profile, h)``; the prediction
    applies the two-term shift model to the unshifted spectrum.
    """
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    n = profiles.shape[1]
    hs = list(range(n)) if shifts is None else list(shifts)
    out = np.empty((len(profiles), len(hs), n))
    for i, p in enumerate(profiles):
        base = spectrum(p)
        for k, h in enumerate(hs):
            out[i, k] = np.abs(shift_spectrum(base, h) - dct_forward(np.roll(p, h)))
    return out


def window_smooth(values: np.ndarray, width: int) -> np.ndarray:
    """Means over consecutive non-overlapping windows of ``width`` samples."""
    v = np.asarray(values, dtype=float)
    k = len(v) // width
    return v[: k * width].reshape(k, width).mean(axis=1)


def shift_variance_surface(profiles: np.ndarray, shifts=None) -> list[dict]:
    """Rows ``(u, h, mean_abs_dev, a_var)`` over a set of base profiles.

    ``a_var`` is the variance across objects of ``x_h(u) / rms(u) - x(u) / rms(u)``,
    the relative change of each coefficient under the shift, where ``rms(u)``
    is the RMS of the unshifted coefficient over all objects (this avoids the
    per-object ratio whose denominator can vanish).
    """
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    n = profiles.shape[1]
    hs = list(range(n)) if shifts is None else list(shifts)
    base = np.array([dct_forward(p) for p in profiles])
    rms = np.sqrt(np.mean(base**2, axis=0))
    rms = np.where(rms > 0, rms, 1.0)
    dev = shift_deviation(profiles, hs)
    rows = []
    for k, h in enumerate(hs):
        shifted = np.array([dct_forward(np.roll(p, h)) for p in profiles])
        rel = (shifted - base) / rms
        var = rel.var(axis=0, ddof=1) if len(profiles) > 1 else np.zeros(n)
        for u in range(n):
            rows.append({"u": u, "h": h, "mean_abs_dev": float(dev[:, k, u].mean()), "a_var": float(var[u])})
    return rows


# --- evaluation run ----------------------------------------------------------------

@dataclass(frozen=True)
class TestItem:
    __test__ = False  # not a pytest test class

    image: BinaryImage
    label: str
    exemplar: str
    snr_db: float | None = None
    blur: float | None = None


@dataclass(eq=False)
class EvalResult:
    class_labels: list[str]
    labels: list[int]
    stage3: list[int]
    stage2: list[int]
    band_votes: list[tuple[int, ...]]
    z: list[np.ndarray]
    ties: list[bool]
    levels: list[str]
    rejected: dict[str, str]
    latency: list[float] = field(default_factory=list)

    @property
    def stage3_rate(self) -> float:
        return recognition_rate(self.stage3, self.labels, len(self.class_labels))[0]

    @property
    def stage2_rate(self) -> float:
        return recognition_rate(self.stage2, self.labels, len(self.class_labels))[0]


def degradation_key(snr_db: float | None, blur: float | None) -> str:
    if snr_db is not None:
        return f"snr{snr_db:g}"
    if blur:
        return f"blur{blur:g}"
    return "clean"


def evaluate(model: RecognitionModel, items: list[TestItem]) -> EvalResult:
    """Recognize every item; unreadable images count as rejected mismatches."""
    m = model.class_count
    res = EvalResult(list(model.class_labels), [], [], [], [], [], [], [], {})
    for it in items:
        if it.label not in model.class_labels:
            raise EvaluationError(f"test label {it.label!r} is not a trained class")
        res.labels.append(model.class_labels.index(it.label))
        res.levels.append(degradation_key(it.snr_db, it.blur))
        t0 = time.perf_counter()
        try:
            r = recognize(model, it.image)
        except ImageError as exc:
            res.latency.append(time.perf_counter() - t0)
            res.rejected[it.exemplar] = str(exc)
            res.stage3.append(REJECTED)
            res.stage2.append(REJECTED)
            res.band_votes.append(())
            res.z.append(np.full(m, np.nan))
            res.ties.append(False)
            continue
        res.latency.append(time.perf_counter() - t0)
        res.stage3.append(r.index)
        res.stage2.append(majority_vote(r.band_votes, m))
        res.band_votes.append(r.band_votes)
        res.z.append(r.z)
        res.ties.append(r.tie)
    return res


def input_vectors(model: RecognitionModel, images: list[BinaryImage]) -> np.ndarray:
    """Concatenated normalized spectra (all bands) as stored in DB_1."""
    return np.array([np.concatenate(image_bands(model, img)) for img in images])


def class_overlaps(result_vectors: np.ndarray, labels, class_labels: list[str], method: str = "projection"):
    v = np.asarray(result_vectors, dtype=float)
    lab = np.asarray(labels)
    keep = np.all(np.isfinite(v), axis=1)
    groups = {class_labels[c]: v[keep & (lab == c)] for c in range(len(class_labels))}
    return overlap_matrix(groups, method)


def fig4_rows(model: RecognitionModel, base: BinaryImage, rotated: BinaryImage) -> list[dict]:
    """B-transformed boundary spectra: base object, rotated copy, and the
    rotated copy after stage-1 filtering."""
    bb = image_bands(model, base)
    rb = image_bands(model, rotated)
    filt = model.filter_bands(rb)
    keys = model.partition.band_keys()
    idx = [i for i, (role, _) in enumerate(keys) if role == BOUNDARY]
    cat = lambda bands: np.concatenate([np.asarray(bands[i]) for i in idx])  # noqa: E731
    xb, xr, xf = b_transform(cat(bb)), b_transform(cat(rb)), b_transform(cat(filt))
    return [{"u": u, "base": float(xb[u]), "rotated": float(xr[u]), "filtered": float(xf[u])} for u in range(len(xb))]


# --- reports ---------------------------------------------------------------------------

def csv_text(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def eval_summary(result: EvalResult, config: dict, overlaps: dict | None = None) -> dict:
    labels = result.class_labels
    m = len(labels)
    rate3, conf = recognition_rate(result.stage3, result.labels, m)
    rate2, _ = recognition_rate(result.stage2, result.labels, m)
    lab = np.asarray(result.labels)
    per_class = {}
    for c, name in enumerate(labels):
        sel = lab == c
        if sel.any():
            per_class[name] = {
                "count": int(sel.sum()),
                "stage3": float(np.mean(np.asarray(result.stage3)[sel] == c)),
                "stage2": float(np.mean(np.asarray(result.stage2)[sel] == c)),
            }
    correct = [p == t for p, t in zip(result.stage3, result.labels)]
    out = {
        "schema": REPORT_SCHEMA,
        "config": config,
        "count": len(result.labels),
        "stage3_rate": rate3,
        "stage2_rate": rate2,
        "per_class": per_class,
        "mismatches": mismatch_table(result.levels, correct),
        "ties": int(sum(result.ties)),
        "rejected": dict(sorted(result.rejected.items())),
        "confusion": conf.tolist(),
    }
    if overlaps is not None:
        out["overlap"] = overlaps
    return out


def emit_reports(
    out_dir: str | Path,
    summary: dict,
    class_labels: list[str],
    overlap_rows: list[dict] | None = None,
    fig4: list[dict] | None = None,
    fig5: list[dict] | None = None,
    latency: list[float] | None = None,
) -> list[Path]:
    """Write eval.json, confusion.csv and the optional CSVs. Timing goes to a
    separate timing.json so that every other file is a pure function of the
    results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("eval.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    conf = summary["confusion"]
    cols = list(class_labels) + (["rejected"] if conf and len(conf[0]) > len(class_labels) else [])
    rows = [{"true": class_labels[i], **dict(zip(cols, row))} for i, row in enumerate(conf)]
    put("confusion.csv", csv_text(rows, ["true"] + cols))
    if overlap_rows is not None:
        put("overlap.csv", csv_text(overlap_rows, OVERLAP_HEADER))
    if fig4 is not None:
        put("fig4_b_transform.csv", csv_text(fig4, FIG4_HEADER))
    if fig5 is not None:
        put("fig5_shift_variance.csv", csv_text(fig5, FIG5_HEADER))
    if latency is not None:
        lat = np.asarray(latency, dtype=float)
        put("timing.json", json.dumps({
            "schema": REPORT_SCHEMA,
            "count": int(lat.size),
            "mean_s": float(lat.mean()) if lat.size else None,
            "max_s": float(lat.max()) if lat.size else None,
        }, sort_keys=True, indent=2) + "\n")
    return written


def overlap_rows(point: str, method: str, matrix: dict[tuple[str, str], float]) -> list[dict]:
    return [{"point": point, "method": method, "k": k, "l": l, "s_kl": v} for (k, l), v in sorted(matrix.items())]

