"""Command line: gen, train, recognize, eval and plotdata."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from rpdct import datagen as dg
from rpdct import evaluation as ev
from rpdct.descriptor import BOUNDARY
from rpdct.imaging import DEFAULT_THRESHOLD, BinaryImage, load_pgm
from rpdct.structure import (
    LabeledImage,
    ModelConfig,
    RecognitionModel,
    describe_image,
    load_model,
    recognize,
    save_model,
    train_mode_a,
)


class CliError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (default 0)")
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON model/run config")
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output file or directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="rpdct", parents=[common],
                                     description="Radial-profile DCT recognition of binary 2D objects.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--group", type=int, default=dg.DEFAULT_GROUP, choices=dg.GROUPS)
    g.add_argument("--train", type=int, default=20)
    g.add_argument("--test", type=int, default=50)
    g.add_argument("--noise", type=_floats, default=(20.0, 25.0, 30.0), help="SNR levels in dB, e.g. 20,25,30")
    g.add_argument("--blur", type=float, default=0.05, help="blur fraction, 0 for none")
    g.add_argument("--runs", type=int, default=0,
                   help="instead of train/test, write RUNS noisy test draws per noise level")

    t = sub.add_parser("train", parents=[common], help="train the three-stage structure")
    t.add_argument("--data", type=Path, required=True, help="dataset directory with a manifest")
    t.add_argument("--db-dir", type=Path, default=None, help="also write DB_1..DB_3 line-JSON here")
    t.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)

    r = sub.add_parser("recognize", parents=[common], help="classify one PGM image")
    r.add_argument("--model", type=Path, required=True)
    r.add_argument("--image", type=Path, required=True)
    r.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)

    e = sub.add_parser("eval", parents=[common], help="evaluate a model on a dataset")
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--split", default=None, help="manifest split to use (default: test, else runs, else all)")
    e.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)

    pd = sub.add_parser("plotdata", parents=[common], help="write the B-transform and shift-variance CSVs")
    pd.add_argument("--model", type=Path, required=True)
    pd.add_argument("--group", type=int, default=None, choices=dg.GROUPS,
                    help=f"shape group for the base objects (default {dg.DEFAULT_GROUP})")
    return parser


# --- helpers ---------------------------------------------------------------------------

def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError("config must be a JSON object")
    return data


def _model_config(raw: dict, seed: int | None) -> ModelConfig:
    raw = dict(raw.get("model", raw))
    if seed is not None:
        raw["seed"] = seed
    return ModelConfig.from_dict(raw)


def _read_image(path: Path, threshold: int) -> BinaryImage:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read image {path}: {exc}") from exc
    return load_pgm(data, threshold)


def _label(ex: dg.Exemplar) -> str:
    return str(ex.cls)


def _select(exemplars: list[dg.Exemplar], split: str | None) -> list[dg.Exemplar]:
    if split is not None:
        return [e for e in exemplars if e.split == split]
    for name in ("test", "runs"):
        chosen = [e for e in exemplars if e.split == name]
        if chosen:
            return chosen
    return exemplars


def _base_profiles(group: int, config: ModelConfig) -> np.ndarray:
    out = []
    for cls in dg.CLASSES:
        desc = describe_image(dg.gen_base_shape(dg.shape_spec(group, cls)), config, None)
        out.append(desc.profiles[BOUNDARY])
    return np.array(out)


def _fig4(model: RecognitionModel, group: int, seed: int) -> list[dict]:
    """Base object of the second class against one rotated, posed copy."""
    cls = dg.CLASSES[1]
    spec = dg.shape_spec(group, cls)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(group, 4)))
    pose = dg.PoseRange().draw(rng, dg.shape_extent(spec))
    return ev.fig4_rows(model, dg.gen_base_shape(spec), dg.apply_pose(spec, pose))


# --- commands --------------------------------------------------------------------------

def cmd_gen(args) -> int:
    out = getattr(args, "out", None)
    if out is None:
        raise CliError("gen needs --out DIR")
    seed = getattr(args, "seed", 0)
    if args.runs:
        exemplars = dg.plan_noise_runs(args.group, args.runs, tuple(args.noise), seed)
    else:
        plan = dg.DatasetPlan(group=args.group, train=args.train, test=args.test,
                              noise=tuple(args.noise), blur=args.blur or None, seed=seed)
        exemplars = dg.plan_exemplars(plan)
    manifest = dg.write_dataset(exemplars, out)
    print(f"wrote {len(exemplars)} images and {manifest}")
    return 0


def cmd_train(args) -> int:
    out = getattr(args, "out", None)
    if out is None:
        raise CliError("train needs --out MODEL.json")
    cfg = _model_config(_load_config(getattr(args, "config", None)), getattr(args, "seed", None))
    exemplars = [e for e in dg.read_manifest(args.data) if e.split == "train"]
    if not exemplars:
        raise CliError(f"no training exemplars in {args.data}")
    dataset = [
        LabeledImage(_read_image(Path(args.data) / e.file, args.threshold), _label(e), e.file, e.base)
        for e in exemplars
    ]
    model, report = train_mode_a(dataset, cfg, args.db_dir)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_bytes(save_model(model))
    for rej in report.rejected:
        print(f"warning: kind=rejected exemplar={rej.exemplar} reason={rej.reason}", file=sys.stderr)
    print(f"trained {model.band_count} bands, {model.class_count} classes, "
          f"training accuracy {report.training_accuracy:.3f}; wrote {out}")
    return 0


def cmd_recognize(args) -> int:
    model = load_model(Path(args.model).read_bytes())
    image = _read_image(args.image, args.threshold)
    t0 = time.perf_counter()
    r = recognize(model, image)
    ms = (time.perf_counter() - t0) * 1000.0
    print(f"class={r.label} tie={str(r.tie).lower()} ms={ms:.3f}")
    return 0


def cmd_eval(args) -> int:
    out = getattr(args, "out", None)
    if out is None:
        raise CliError("eval needs --out DIR")
    model = load_model(Path(args.model).read_bytes())
    exemplars = _select(dg.read_manifest(args.data), args.split)
    if not exemplars:
        raise CliError(f"no exemplars to evaluate in {args.data}")
    items = [
        ev.TestItem(_read_image(Path(args.data) / e.file, args.threshold), _label(e), e.file, e.snr_db, e.blur)
        for e in exemplars
    ]
    result = ev.evaluate(model, items)

    ok = [v for v in range(len(items)) if result.stage3[v] != ev.REJECTED]
    labels = [result.labels[v] for v in ok]
    x = ev.input_vectors(model, [items[v].image for v in ok])
    z = np.array([result.z[v] for v in ok])
    rows, overlap = [], {}
    for point, vecs in (("input", x), ("output", z)):
        for method in ("projection", "componentwise"):
            try:
                mat = ev.class_overlaps(vecs, labels, model.class_labels, method)
            except ev.EvaluationError:
                continue
            rows += ev.overlap_rows(point, method, mat)
            overlap[f"{point}/{method}"] = {f"{k}-{l}": v for (k, l), v in sorted(mat.items())}

    groups = sorted({e.group for e in exemplars})
    seed = getattr(args, "seed", 0)
    fig4 = fig5 = None
    if len(groups) == 1:
        fig4 = _fig4(model, groups[0], seed)
        fig5 = ev.shift_variance_surface(_base_profiles(groups[0], model.config))
    config = {
        "model": model.config.to_dict(),
        "eval": {"data": Path(args.data).name, "split": args.split, "threshold": args.threshold, "seed": seed},
        "run": _load_config(getattr(args, "config", None)),
    }
    summary = ev.eval_summary(result, config, overlap)
    ev.emit_reports(out, summary, model.class_labels, rows, fig4, fig5, result.latency)
    print(f"stage3={summary['stage3_rate']:.4f} stage2={summary['stage2_rate']:.4f} "
          f"n={summary['count']} reports={out}")
    return 0


def cmd_plotdata(args) -> int:
    out = getattr(args, "out", None)
    if out is None:
        raise CliError("plotdata needs --out DIR")
    model = load_model(Path(args.model).read_bytes())
    group = args.group if args.group is not None else dg.DEFAULT_GROUP
    seed = getattr(args, "seed", 0)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fig4_b_transform.csv").write_text(ev.csv_text(_fig4(model, group, seed), ev.FIG4_HEADER))
    fig5 = ev.shift_variance_surface(_base_profiles(group, model.config))
    (out / "fig5_shift_variance.csv").write_text(ev.csv_text(fig5, ev.FIG5_HEADER))
    print(f"wrote plot data to {out}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "recognize": cmd_recognize, "eval": cmd_eval, "plotdata": cmd_plotdata}


def _error_line(exc: BaseException) -> str:
    msg = " ".join(str(exc).split())
    return f"error: kind={type(exc).__name__} message={json.dumps(msg)}"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on unknown flags
    try:
        return COMMANDS[args.command](args)
    except (CliError, ValueError, OSError, KeyError, RuntimeError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
