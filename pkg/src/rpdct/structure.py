"""Three-stage recognition structure: band filtering, per-band partial
recognition and general classification, trained stage by stage.

Training (mode A) runs build_db1 -> stage 1 -> DB_2 -> stage 2 -> DB_3 ->
stage 3, each stage learning only from the vectors the previous stage
produced. Recognition (mode B) pushes one image through all blocks.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from rpdct import neuralnet as nn
from rpdct.descriptor import (
    BOUNDARY,
    BandPartition,
    DescriptorConfig,
    ObjectDescriptor,
    Spectrum,
    apply_bands,
    describe,
    dct_forward,
    fit_partition,
    normalize_amplitude,
    shift_spectrum,
)
from rpdct.imaging import BinaryImage, ImageError, remove_specks, trace_contours

log = logging.getLogger(__name__)

MODEL_SCHEMA = 1
DB_SCHEMA = 1
ROTATION_SOURCES = ("shift_model", "profile_shift", "none")
ROTATION_BASES = ("first", "base", "all")


class StructureError(ValueError):
    pass


class HoleCountError(ImageError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hole_count: int | None = None  # None: taken from the first training exemplar
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    stage1: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    stage2: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    stage3: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    stage1_hidden: int | None = None  # None: band width
    stage2_hidden: int = 16
    stage3_hidden: int = 16
    rotation_exemplars_per_class: int = 20
    rotation_source: str = "profile_shift"
    rotation_bases: str = "all"  # exemplars that get rotated variants: "first" base, every "base", "all"
    target_level: float = 0.9
    speck_area: int = 5  # components/holes below this many pixels are noise
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.hole_count is not None and self.hole_count < 0:
            raise StructureError("hole_count must be >= 0")
        if self.rotation_exemplars_per_class < 1:
            raise StructureError("rotation_exemplars_per_class must be >= 1")
        if self.rotation_source not in ROTATION_SOURCES:
            raise StructureError(f"rotation_source must be one of {ROTATION_SOURCES}")
        if self.rotation_bases not in ROTATION_BASES:
            raise StructureError(f"rotation_bases must be one of {ROTATION_BASES}")
        if not 0 < self.target_level < 1:
            raise StructureError("target_level must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        kw = {}
        if "descriptor" in d:
            kw["descriptor"] = DescriptorConfig(**d.pop("descriptor"))
        for stage in ("stage1", "stage2", "stage3"):
            if stage in d:
                kw[stage] = nn.TrainConfig(**d.pop(stage))
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise StructureError(f"unknown config keys {sorted(unknown)}")
        return cls(**d, **kw)


@dataclass(frozen=True)
class LabeledImage:
    image: BinaryImage
    label: str
    exemplar: str
    base: bool = False


# --- codecs -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Affine:
    """Per-component ``encoded = (value - offset) * gain``."""

    offset: np.ndarray
    gain: np.ndarray

    def encode(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v) - self.offset) * self.gain

    def decode(self, e: np.ndarray) -> np.ndarray:
        return np.asarray(e) / self.gain + self.offset

    def to_dict(self) -> dict:
        return {"offset": self.offset.tolist(), "gain": self.gain.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Affine:
        return cls(np.array(d["offset"], dtype=float), np.array(d["gain"], dtype=float))


def standardizer(samples: np.ndarray, floor: float = 1e-12, per_component: bool = True) -> Affine:
    """Centre each component; scale per component, or by one overall RMS spread
    so that the relative weight of components is preserved."""
    mean = samples.mean(axis=0)
    if per_component:
        std = samples.std(axis=0)
    else:
        std = np.full_like(mean, np.sqrt(np.mean((samples - mean) ** 2)))
    return Affine(mean, 1.0 / np.maximum(std, floor))


def range_codec(targets: np.ndarray, level: float, floor: float = 1e-12) -> Affine:
    """Map each component's [min, max] over ``targets`` onto [-level, level]."""
    lo, hi = targets.min(axis=0), targets.max(axis=0)
    half = np.maximum((hi - lo) / 2.0, floor)
    return Affine((hi + lo) / 2.0, level / half)


# --- DB_1 -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Entry:
    """One exemplar's band vectors in partition order."""

    label: int
    exemplar: str
    bands: tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class Rejection:
    exemplar: str
    reason: str


@dataclass(eq=False)
class Db1:
    partition: BandPartition
    entries: list[Entry]
    descriptors: dict[str, ObjectDescriptor]
    labels: dict[str, int]
    base: dict[str, bool]
    rejected: list[Rejection]


def describe_image(image: BinaryImage, config: ModelConfig, hole_count: int | None) -> ObjectDescriptor:
    desc = describe(trace_contours(remove_specks(image, config.speck_area)), config.descriptor)
    found = len(desc.roles) - 1
    if hole_count is not None and found != hole_count:
        raise HoleCountError(f"object has {found} holes, model expects {hole_count}")
    return desc


def _entry(desc_norm: dict[str, np.ndarray], partition: BandPartition, label: int, key: str) -> Entry:
    bands = []
    for role in partition.roles:
        bands += apply_bands(desc_norm[role], partition, role)
    return Entry(label, key, tuple(bands))


def build_db1(dataset: list[LabeledImage], config: ModelConfig, class_labels: list[str]) -> Db1:
    """Describe every training image, fit the band partition and slice bands.

    Exemplars whose hole count differs from the configured one (or from the
    first exemplar's when unset) are rejected with a reason; the rest continue.
    """
    hole_count = config.hole_count
    descriptors, labels, base, rejected = {}, {}, {}, []
    for item in dataset:
        try:
            desc = describe_image(item.image, config, hole_count)
        except (ImageError, ValueError) as exc:
            log.warning("rejected exemplar %s: %s", item.exemplar, exc)
            rejected.append(Rejection(item.exemplar, str(exc)))
            continue
        if hole_count is None:
            hole_count = len(desc.roles) - 1
        descriptors[item.exemplar] = desc
        labels[item.exemplar] = class_labels.index(item.label)
        base[item.exemplar] = item.base
    if len(descriptors) < 2:
        raise StructureError("fewer than 2 usable training exemplars")
    roles = next(iter(descriptors.values())).roles
    partition = fit_partition(
        {role: np.array([d.normalized[role] for d in descriptors.values()]) for role in roles},
        config.descriptor,
    )
    entries = [_entry(d.normalized, partition, labels[k], k) for k, d in descriptors.items()]
    return Db1(partition, entries, descriptors, labels, base, rejected)


def db_records(entries: list[Entry], partition: BandPartition, stage: str, class_labels: list[str]) -> list[dict]:
    """Line-JSON records keyed by (class, exemplar, role, band)."""
    keys = partition.band_keys()
    out = []
    for e in entries:
        for (role, b), vec in zip(keys, e.bands):
            out.append({
                "schema": DB_SCHEMA,
                "stage": stage,
                "class": class_labels[e.label],
                "exemplar": e.exemplar,
                "role": role,
                "band": b,
                "coeffs": np.asarray(vec).tolist(),
            })
    return out


def write_records(records: list[dict], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def read_records(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            if rec.get("schema") != DB_SCHEMA:
                raise StructureError(f"unsupported DB schema {rec.get('schema')!r}")
            out.append(rec)
    return out


def entries_from_records(records: list[dict], partition: BandPartition, class_labels: list[str]) -> list[Entry]:
    keys = partition.band_keys()
    grouped: dict[tuple[str, str], dict] = {}
    for r in records:
        grouped.setdefault((r["class"], r["exemplar"]), {})[(r["role"], int(r["band"]))] = np.array(r["coeffs"])
    out = []
    for (cls, ex), bands in grouped.items():
        missing = [k for k in keys if k not in bands]
        if missing:
            raise StructureError(f"exemplar {ex} lacks bands {missing}")
        out.append(Entry(class_labels.index(cls), ex, tuple(bands[k] for k in keys)))
    return out


# --- rotation augmentation -----------------------------------------------------------

def shift_set(length: int, count: int) -> list[int]:
    """``count`` shifts spread evenly over [0, length)."""
    return sorted({(k * length) // count for k in range(count)})


def make_rotation_training_set(
    base: dict[str, Spectrum],
    partition: BandPartition,
    count: int,
    source: str = "shift_model",
    profiles: dict[str, np.ndarray] | None = None,
) -> list[tuple[int, list[np.ndarray]]]:
    """Rotated variants of one base object as (shift index, band vectors).

    Each role is shifted by the same fraction of its length. ``shift_model``
    predicts the shifted spectrum from the cosine and sine spectra;
    ``profile_shift`` transforms the cyclically shifted profile directly.
    """
    out = []
    boundary_n = partition.lengths[BOUNDARY]
    for h in shift_set(boundary_n, count):
        bands = []
        for role in partition.roles:
            n = partition.lengths[role]
            hr = (h * n) // boundary_n
            if source == "profile_shift":
                coeffs = dct_forward(np.roll(profiles[role], hr))
            else:
                coeffs = shift_spectrum(base[role], hr)
            bands += apply_bands(normalize_amplitude(coeffs), partition, role)
        out.append((h, bands))
    return out


# --- model ---------------------------------------------------------------------------

@dataclass(eq=False)
class RecognitionModel:
    config: ModelConfig
    partition: BandPartition
    class_labels: list[str]
    hole_count: int
    stage1: list[nn.Mlp]
    stage1_in: list[Affine]
    stage1_out: list[Affine]
    stage2: list[nn.Mlp]
    stage2_in: list[Affine]
    stage3: nn.Mlp

    @property
    def class_count(self) -> int:
        return len(self.class_labels)

    @property
    def band_count(self) -> int:
        return len(self.partition.band_keys())

    def check(self) -> None:
        m, nb = self.class_count, self.band_count
        if not (len(self.stage1) == len(self.stage2) == nb):
            raise StructureError("stage 1/2 net count does not match band count")
        for (role, b), s1, s2 in zip(self.partition.band_keys(), self.stage1, self.stage2):
            w = self.partition.band_width(role, b)
            if s1.input_size != w or s1.output_size != w or s2.input_size != w or s2.output_size != m:
                raise StructureError(f"net dimensions inconsistent for band {role}/{b}")
        if self.stage3.input_size != m * nb or self.stage3.output_size != m:
            raise StructureError("stage 3 dimensions inconsistent")

    # stage read-outs
    def filter_bands(self, bands: list[np.ndarray]) -> list[np.ndarray]:
        """Stage 1: band vectors (one per band, or batches) to filtered vectors."""
        return [
            cout.decode(nn.forward(net, cin.encode(x)))
            for net, cin, cout, x in zip(self.stage1, self.stage1_in, self.stage1_out, bands)
        ]

    def partial(self, filtered: list[np.ndarray]) -> list[np.ndarray]:
        """Stage 2: per-band class outputs."""
        return [nn.forward(net, cin.encode(x)) for net, cin, x in zip(self.stage2, self.stage2_in, filtered)]

    def classify(self, y: np.ndarray) -> np.ndarray:
        return nn.forward(self.stage3, y)


def _one_hot(labels: np.ndarray, m: int, level: float) -> np.ndarray:
    t = np.full((len(labels), m), -level)
    t[np.arange(len(labels)), labels] = level
    return t


def _net_seed(seed: int, stage: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(stage, index)).generate_state(1)[0])


def _train_net(x, t, hidden, tc: nn.TrainConfig, seed: int, stage: int, index: int, what: str):
    s = _net_seed(seed, stage, index)
    net = nn.init_mlp(x.shape[1], hidden, t.shape[1], s, tc.weight_init_scale)
    try:
        return nn.train(net, x, t, replace(tc, seed=s))
    except nn.TrainingDivergedError as exc:
        raise nn.TrainingDivergedError(f"{what}: {exc}") from exc


def _map(fn, items, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


@dataclass(eq=False)
class Stage1Data:
    entries: list[Entry]
    targets: list[np.ndarray]  # per band: (classes, width) clean class means


def stage1_training_set(db1: Db1, config: ModelConfig, class_count: int) -> Stage1Data:
    """Stage-1 inputs (DB_1 vectors plus rotated base variants) and class targets.

    Targets are per-class means over that class's base exemplars, or over all
    its exemplars when none is flagged as base.
    """
    nb = len(db1.partition.band_keys())
    targets = []
    for b in range(nb):
        rows = []
        for c in range(class_count):
            own = [e for e in db1.entries if e.label == c]
            if not own:
                raise StructureError(f"class index {c} has no training exemplars")
            basis = [e for e in own if db1.base[e.exemplar]] or own
            rows.append(np.mean([e.bands[b] for e in basis], axis=0))
        targets.append(np.array(rows))

    entries = list(db1.entries)
    if config.rotation_source != "none":
        for c in range(class_count):
            own = [k for k in db1.descriptors if db1.labels[k] == c]
            bases = [k for k in own if db1.base[k]] or own[:1]
            if config.rotation_bases == "first":
                bases = bases[:1]
            elif config.rotation_bases == "all":
                bases = own
            for key in bases:
                desc = db1.descriptors[key]
                variants = make_rotation_training_set(
                    desc.spectra, db1.partition, config.rotation_exemplars_per_class,
                    config.rotation_source, desc.profiles,
                )
                entries += [Entry(c, f"{key}@h{h}", tuple(bands)) for h, bands in variants]
    return Stage1Data(entries, targets)


def train_stage1(data: Stage1Data, partition: BandPartition, config: ModelConfig):
    nb = len(partition.band_keys())
    labels = np.array([e.label for e in data.entries])

    def fit(b):
        x = np.array([e.bands[b] for e in data.entries])
        cin = standardizer(x)
        cout = range_codec(data.targets[b], config.target_level)
        t = cout.encode(data.targets[b][labels])
        hidden = config.stage1_hidden or x.shape[1]
        res = _train_net(cin.encode(x), t, hidden, config.stage1, config.seed, 1, b, f"stage 1 band {b}")
        return res, cin, cout

    return _map(fit, range(nb), config.workers)


def run_stage1(model: RecognitionModel, entries: list[Entry]) -> list[Entry]:
    nb = model.band_count
    filtered = model.filter_bands([np.array([e.bands[b] for e in entries]) for b in range(nb)])
    return [Entry(e.label, e.exemplar, tuple(f[i] for f in filtered)) for i, e in enumerate(entries)]


def train_stage2(db2: list[Entry], config: ModelConfig, class_count: int, nb: int):
    labels = np.array([e.label for e in db2])
    t = _one_hot(labels, class_count, config.target_level)

    def fit(b):
        x = np.array([e.bands[b] for e in db2])
        cin = standardizer(x)
        res = _train_net(cin.encode(x), t, config.stage2_hidden, config.stage2, config.seed, 2, b,
                         f"stage 2 band {b}")
        return res, cin

    return _map(fit, range(nb), config.workers)


def run_stage2(model: RecognitionModel, db2: list[Entry]) -> list[Entry]:
    nb = model.band_count
    outs = model.partial([np.array([e.bands[b] for e in db2]) for b in range(nb)])
    return [Entry(e.label, e.exemplar, tuple(o[i] for o in outs)) for i, e in enumerate(db2)]


def train_stage3(db3: list[Entry], config: ModelConfig, class_count: int):
    x = np.array([np.concatenate(e.bands) for e in db3])
    t = _one_hot(np.array([e.label for e in db3]), class_count, config.target_level)
    return _train_net(x, t, config.stage3_hidden, config.stage3, config.seed, 3, 0, "stage 3")


@dataclass(eq=False)
class TrainingReport:
    db1_records: int
    rejected: list[Rejection]
    stage_mse: dict[str, list[float]]
    stage_epochs: dict[str, list[int]]
    training_accuracy: float
    events: list[str]
    timings: dict[str, float]


def train_mode_a(
    dataset: list[LabeledImage],
    config: ModelConfig = ModelConfig(),
    store_dir: str | Path | None = None,
) -> tuple[RecognitionModel, TrainingReport]:
    """Train all three stages consecutively; optionally persist DB_1..DB_3."""
    class_labels = sorted({d.label for d in dataset})
    m = len(class_labels)
    if m < 2:
        raise StructureError("need at least 2 classes")
    events, timings = [], {}
    store = Path(store_dir) if store_dir else None
    if store:
        store.mkdir(parents=True, exist_ok=True)

    def mark(name, t0):
        events.append(name)
        timings[name] = time.perf_counter() - t0

    t0 = time.perf_counter()
    db1 = build_db1(dataset, config, class_labels)
    hole_count = len(db1.partition.roles) - 1
    partition = db1.partition
    nb = len(partition.band_keys())
    if store:
        write_records(db_records(db1.entries, partition, "db1", class_labels), store / "db1.jsonl")
    mark("build_db1", t0)

    t0 = time.perf_counter()
    s1data = stage1_training_set(db1, config, m)
    s1 = train_stage1(s1data, partition, config)
    mark("train_stage1", t0)

    model = RecognitionModel(
        config, partition, class_labels, hole_count,
        [r.net for r, _, _ in s1], [c for _, c, _ in s1], [c for _, _, c in s1],
        [], [], nn.Mlp(np.zeros((1, 2)), np.zeros((1, 2))),
    )
    t0 = time.perf_counter()
    db2 = run_stage1(model, s1data.entries)
    if store:
        write_records(db_records(db2, partition, "db2", class_labels), store / "db2.jsonl")
    mark("run_stage1", t0)

    t0 = time.perf_counter()
    s2 = train_stage2(db2, config, m, nb)
    model.stage2 = [r.net for r, _ in s2]
    model.stage2_in = [c for _, c in s2]
    mark("train_stage2", t0)

    t0 = time.perf_counter()
    db3 = run_stage2(model, db2)
    if store:
        write_records(db_records(db3, partition, "db3", class_labels), store / "db3.jsonl")
    mark("run_stage2", t0)

    t0 = time.perf_counter()
    s3 = train_stage3(db3, config, m)
    model.stage3 = s3.net
    model.check()
    mark("train_stage3", t0)

    t0 = time.perf_counter()
    z = model.classify(np.array([np.concatenate(e.bands) for e in db3]))
    acc = float(np.mean(np.argmax(z, axis=1) == np.array([e.label for e in db3])))
    mark("run_stage3", t0)

    report = TrainingReport(
        db1_records=len(db1.entries) * nb,
        rejected=db1.rejected,
        stage_mse={
            "stage1": [r.final_mse for r, _, _ in s1],
            "stage2": [r.final_mse for r, _ in s2],
            "stage3": [s3.final_mse],
        },
        stage_epochs={
            "stage1": [r.epochs for r, _, _ in s1],
            "stage2": [r.epochs for r, _ in s2],
            "stage3": [s3.epochs],
        },
        training_accuracy=acc,
        events=events,
        timings=timings,
    )
    return model, report


# --- recognition -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Recognition:
    label: str
    index: int
    tie: bool
    z: np.ndarray
    y: np.ndarray
    band_votes: tuple[int, ...]
    timings: dict[str, float]


def image_bands(model: RecognitionModel, image: BinaryImage) -> list[np.ndarray]:
    desc = describe_image(image, model.config, model.hole_count)
    bands = []
    for role in model.partition.roles:
        bands += apply_bands(desc.normalized[role], model.partition, role)
    return bands


def decide(z: np.ndarray) -> tuple[int, bool]:
    """Argmax with ties going to the lowest class index."""
    best = int(np.argmax(z))
    return best, int(np.sum(z == z[best])) > 1


def recognize(model: RecognitionModel, image: BinaryImage) -> Recognition:
    t0 = time.perf_counter()
    bands = image_bands(model, image)
    t1 = time.perf_counter()
    filtered = model.filter_bands(bands)
    t2 = time.perf_counter()
    partial = model.partial(filtered)
    y = np.concatenate(partial)
    t3 = time.perf_counter()
    z = model.classify(y)
    idx, tie = decide(z)
    t4 = time.perf_counter()
    return Recognition(
        model.class_labels[idx], idx, tie, z, y,
        tuple(int(np.argmax(p)) for p in partial),
        {"preprocess": t1 - t0, "stage1": t2 - t1, "stage2": t3 - t2, "stage3": t4 - t3, "total": t4 - t0},
    )


# --- archive ---------------------------------------------------------------------------

def model_to_dict(model: RecognitionModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "config": model.config.to_dict(),
        "partition": model.partition.to_dict(),
        "class_labels": list(model.class_labels),
        "hole_count": model.hole_count,
        "stage1": [nn.to_dict(n) for n in model.stage1],
        "stage2": [nn.to_dict(n) for n in model.stage2],
        "stage3": nn.to_dict(model.stage3),
        "affine_codecs": {
            "stage1_in": [c.to_dict() for c in model.stage1_in],
            "stage1_out": [c.to_dict() for c in model.stage1_out],
            "stage2_in": [c.to_dict() for c in model.stage2_in],
        },
    }


def save_model(model: RecognitionModel) -> bytes:
    return (json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")) + "\n").encode()


def load_model(data: bytes) -> RecognitionModel:
    try:
        d = json.loads(data)
        if d.get("schema") != MODEL_SCHEMA:
            raise StructureError(f"unsupported model schema {d.get('schema')!r}")
        for key in ("config", "partition", "class_labels", "stage1", "stage2", "stage3", "affine_codecs"):
            if key not in d or d[key] in (None, []):
                raise StructureError(f"model archive is missing {key!r}")
        codecs = d["affine_codecs"]
        model = RecognitionModel(
            ModelConfig.from_dict(d["config"]),
            BandPartition.from_dict(d["partition"]),
            list(d["class_labels"]),
            int(d["hole_count"]),
            [nn.from_dict(n) for n in d["stage1"]],
            [Affine.from_dict(c) for c in codecs["stage1_in"]],
            [Affine.from_dict(c) for c in codecs["stage1_out"]],
            [nn.from_dict(n) for n in d["stage2"]],
            [Affine.from_dict(c) for c in codecs["stage2_in"]],
            nn.from_dict(d["stage3"]),
        )
    except StructureError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise StructureError(f"malformed model archive: {exc}") from exc
    model.check()
    return model
