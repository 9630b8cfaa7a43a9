"""Dataset and model files, normalization, synthetic data and decimation.

Dataset layout on disk::

    manifest.json
        {"format_version": 1, "input_dim": p, "output_dim": D,
         "classes": [{"name": "...", "instances": ["relative/path.csv", ...]}, ...]}

    <instance>.csv
        header ``x1,...,xp,f1,...,fD``, one row per input point.

Paths inside the manifest are relative to the manifest's directory. Models
are JSON documents (see :func:`save_model`).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .kernels import build_kff
from .model import (APPROX_KINDS, KERNEL_MODES, ClassHyperparams, Dataset, Instance,
                    KernelConfig, ModelBundle, Normalization, validate_dataset)

FORMAT_VERSION = 1
MODEL_FORMAT = "mogpc-model"
STD_FLOOR = 1e-12


class DataError(ValueError):
    """Malformed dataset, manifest, spec or model file."""


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def read_instance(path, input_dim: int, output_dim: int, class_id=None) -> Instance:
    path = Path(path)
    expected = [f"x{j + 1}" for j in range(input_dim)] + [f"f{d + 1}" for d in range(output_dim)]
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise DataError(f"{path}: cannot open instance file ({e.strerror})") from e
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}:1: empty file, expected header {','.join(expected)}")
        header = [h.strip() for h in header]
        if header != expected:
            raise DataError(f"{path}:1: bad header {','.join(header)!r}, "
                            f"expected {','.join(expected)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise DataError(f"{path}:{lineno}: {len(row)} columns, expected {len(expected)}")
            vals = []
            for col, cell in zip(expected, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric value {cell!r} "
                                    f"in column {col}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: non-finite value {cell!r} in column {col}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    return Instance(arr[:, :input_dim], arr[:, input_dim:].T, class_id, str(path))


def write_instance(path, inst: Instance):
    p, D = inst.input_dim, inst.output_dim
    header = [f"x{j + 1}" for j in range(p)] + [f"f{d + 1}" for d in range(D)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n in range(inst.n_points):
            w.writerow([repr(float(v)) for v in inst.inputs[n]] +
                       [repr(float(v)) for v in inst.outputs[:, n]])


def _find_manifest(path) -> Path:
    path = Path(path)
    return path / "manifest.json" if path.is_dir() else path


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset from a manifest file or a directory containing ``manifest.json``."""
    mpath = _find_manifest(manifest_path)
    try:
        doc = json.loads(mpath.read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"{mpath}: cannot read manifest ({e.strerror})") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{mpath}:{e.lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(doc, dict):
        raise DataError(f"{mpath}: manifest must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{mpath}: unsupported format_version {doc.get('format_version')!r}")
    try:
        p, D = int(doc["input_dim"]), int(doc["output_dim"])
        classes = doc["classes"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{mpath}: missing or invalid field {e}") from e
    if p < 1 or D < 1:
        raise DataError(f"{mpath}: input_dim and output_dim must be positive")
    base = mpath.parent
    names, insts = [], []
    for m, c in enumerate(classes):
        try:
            names.append(str(c["name"]))
            files = list(c["instances"])
        except (KeyError, TypeError) as e:
            raise DataError(f"{mpath}: class entry {m} missing field {e}") from e
        insts.append([read_instance(base / f, p, D, class_id=m) for f in files])
    ds = Dataset(insts, names, p, D)
    problems = validate_dataset(ds, min_classes=1)
    if problems:
        raise DataError(f"{mpath}: " + "; ".join(problems))
    return ds


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write ``manifest.json`` and one CSV per instance into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    classes = []
    for m, insts in enumerate(ds.classes):
        name = ds.class_names[m]
        files = []
        for l, inst in enumerate(insts):
            fname = f"{_safe(name)}_{l:04d}.csv"
            write_instance(out / fname, inst)
            files.append(fname)
        classes.append({"name": name, "instances": files})
    doc = {"format_version": FORMAT_VERSION, "input_dim": ds.input_dim,
           "output_dim": ds.output_dim, "classes": classes}
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return mpath


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name) or "class"


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


def _theta_doc(th: ClassHyperparams) -> dict:
    doc = {
        "latent_log_precisions": th.latent_log_precisions.tolist(),
        "output_log_precisions": th.output_log_precisions.tolist(),
        "mixing": th.mixing.tolist(),
        "log_noise_vars": th.log_noise_vars.tolist(),
    }
    if th.inducing_inputs is not None:
        doc["inducing_inputs"] = th.inducing_inputs.tolist()
    return doc


def model_to_dict(model: ModelBundle) -> dict:
    cfg = model.kernel_config
    doc = {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "kernel": {"n_latent": cfg.n_latent, "mode": cfg.mode, "input_dim": cfg.input_dim},
        "approx": model.approx,
        "mce_scaling": {"a": model.mce_scaling[0], "b": model.mce_scaling[1]},
        "normalization": None,
        "classes": [{"name": n, "params": _theta_doc(th)}
                    for n, th in zip(model.class_names, model.per_class)],
    }
    if model.normalization is not None:
        doc["normalization"] = {"mean": model.normalization.mean.tolist(),
                                "std": model.normalization.std.tolist()}
    return doc


def model_from_dict(doc: dict, where: str = "model") -> ModelBundle:
    def fail(msg):
        raise DataError(f"{where}: {msg}")

    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        fail("not a model document")
    if doc.get("format_version") != FORMAT_VERSION:
        fail(f"unsupported format_version {doc.get('format_version')!r}")
    try:
        k = doc["kernel"]
        if k["mode"] not in KERNEL_MODES:
            fail(f"unknown kernel mode {k['mode']!r}")
        cfg = KernelConfig(int(k["n_latent"]), k["mode"], int(k["input_dim"]))
        approx = doc["approx"]
        if approx not in APPROX_KINDS:
            fail(f"unknown approximation {approx!r}")
        scaling = (float(doc["mce_scaling"]["a"]), float(doc["mce_scaling"]["b"]))
        norm = doc.get("normalization")
        if norm is not None:
            norm = Normalization(norm["mean"], norm["std"])
        names, thetas = [], []
        for c in doc["classes"]:
            names.append(str(c["name"]))
            p = c["params"]
            thetas.append(ClassHyperparams(
                p["latent_log_precisions"], p["output_log_precisions"], p["mixing"],
                p["log_noise_vars"], p.get("inducing_inputs")))
    except DataError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        fail(f"schema violation ({type(e).__name__}: {e})")
    for th in thetas:
        if th.n_latent != cfg.n_latent or th.input_dim != cfg.input_dim:
            fail("class parameters disagree with kernel config")
        if approx != "exact" and th.inducing_inputs is None:
            fail(f"{approx} model without inducing inputs")
    try:
        return ModelBundle(tuple(thetas), cfg, tuple(names), approx, scaling, norm)
    except ValueError as e:
        fail(str(e))


def save_model(model: ModelBundle, path):
    """Write ``model`` as JSON. Floats use the shortest repr that round-trips
    exactly (at most 17 significant digits)."""
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n", encoding="utf-8")


def load_model(path) -> ModelBundle:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"{path}: cannot read model ({e.strerror})") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    return model_from_dict(doc, str(path))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def normalize_fit(ds: Dataset) -> Normalization:
    F = np.hstack([inst.outputs for _, inst in ds.labeled()])
    if F.size == 0:
        raise ValueError("dataset is empty")
    return Normalization(F.mean(axis=1), np.maximum(F.std(axis=1), STD_FLOOR))


def normalize_apply(inst: Instance, stats: Optional[Normalization]) -> Instance:
    if stats is None:
        return inst
    f = (inst.outputs - stats.mean[:, None]) / stats.std[:, None]
    return Instance(inst.inputs, f, inst.class_id, inst.source)


def normalize_dataset(ds: Dataset, stats: Optional[Normalization]) -> Dataset:
    if stats is None:
        return ds
    return Dataset([[normalize_apply(i, stats) for i in c] for c in ds.classes],
                   ds.class_names, ds.input_dim, ds.output_dim)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    start: float = 0.0
    end: float = 10.0
    n: int = 40
    jittered: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid needs n >= 2")
        if not self.end > self.start:
            raise ValueError("grid needs end > start")


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings: one hyperparameter set per class.

    ``warp`` > 0 replaces each draw ``f(x)`` with ``f(w(x))`` for the monotone
    map ``w(u) = u + warp * sin(2 pi u) / (2 pi)`` on the grid's unit interval.
    Any ``warp`` in ``[0, 1)`` keeps ``w`` strictly increasing with fixed
    endpoints.
    """

    classes: tuple
    kernel_config: KernelConfig
    n_instances: int = 20
    grid: GridSpec = GridSpec()
    warp: float = 0.0
    seed: int = 0
    class_names: Optional[tuple] = None

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if not 0 <= self.warp < 1:
            raise ValueError("warp strength must be in [0, 1)")
        if not self.classes:
            raise ValueError("need at least one class")


def warp_grid(x, start, end, strength):
    u = (x - start) / (end - start)
    return start + (end - start) * (u + strength * np.sin(2 * np.pi * u) / (2 * np.pi))


def _draw_instance(spec: SynthSpec, m: int, l: int) -> Instance:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, m, l]))
    g = spec.grid
    theta = spec.classes[m]
    p = spec.kernel_config.input_dim
    if p == 1:
        X = np.linspace(g.start, g.end, g.n)
        if g.jittered:
            h = (g.end - g.start) / (g.n - 1)
            X = X + rng.uniform(-0.4 * h, 0.4 * h, g.n)
        X = X[:, None]
    else:
        X = rng.uniform(g.start, g.end, (g.n, p))
    K = build_kff(X, theta, spec.kernel_config, include_noise=True)
    f = (K.chol @ rng.standard_normal(K.matrix.shape[0])).reshape(theta.n_outputs, g.n)
    if spec.warp > 0:
        if p != 1:
            raise ValueError("warp is defined for one-dimensional inputs only")
        xw = warp_grid(X[:, 0], g.start, g.end, spec.warp)
        order = np.argsort(X[:, 0])
        f = np.array([np.interp(xw, X[order, 0], row[order]) for row in f])
    return Instance(X, f, class_id=m)


def synth_generate(spec: SynthSpec) -> Dataset:
    """Draw ``n_instances`` fields per class; reproducible from ``spec.seed``.

    Each instance uses its own generator seeded by ``(seed, class, instance)``.
    """
    M = len(spec.classes)
    names = spec.class_names or tuple(f"class{m}" for m in range(M))
    classes = [[_draw_instance(spec, m, l) for l in range(spec.n_instances)] for m in range(M)]
    return Dataset(classes, names, spec.kernel_config.input_dim, spec.classes[0].n_outputs)


def synth_spec_from_dict(doc: dict) -> SynthSpec:
    """Parse a generator spec document.

    Class parameters are given on the natural scale: ``latent_precisions``
    (Q x p), ``output_precisions`` (D x p), ``mixing`` (D x Q) and
    ``noise_vars`` (D).
    """
    try:
        k = doc.get("kernel", {})
        cfg = KernelConfig(int(k.get("n_latent", 1)), k.get("mode", "convolved"),
                           int(k.get("input_dim", 1)))
        names, thetas = [], []
        for c in doc["classes"]:
            names.append(str(c.get("name", f"class{len(names)}")))
            thetas.append(ClassHyperparams(
                np.log(np.array(c["latent_precisions"], float).reshape(cfg.n_latent, cfg.input_dim)),
                np.log(np.array(c["output_precisions"], float).reshape(-1, cfg.input_dim)),
                np.array(c["mixing"], float).reshape(-1, cfg.n_latent),
                np.log(np.array(c["noise_vars"], float).ravel())))
        gd = doc.get("grid", {})
        grid = GridSpec(float(gd.get("start", 0.0)), float(gd.get("end", 10.0)),
                        int(gd.get("n", 40)), bool(gd.get("jittered", False)))
        mis = doc.get("misspecification") or {"kind": "none"}
        if mis.get("kind", "none") == "none":
            warp = 0.0
        elif mis["kind"] == "warp":
            warp = float(mis.get("strength", 0.3))
        else:
            raise ValueError(f"unknown misspecification {mis['kind']!r}")
        if len({th.n_outputs for th in thetas}) != 1:
            raise ValueError("all classes must have the same number of outputs")
        return SynthSpec(tuple(thetas), cfg, int(doc.get("n_instances", 20)), grid, warp,
                         int(doc.get("seed", 0)), tuple(names))
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise DataError(f"invalid synth spec: {e}") from e


def decimate(inst: Instance, keep_every: int) -> Instance:
    """Keep points ``0, k, 2k, ...``; input coordinates are left unchanged."""
    k = int(keep_every)
    if k < 1:
        raise ValueError("keep_every must be >= 1")
    idx = np.arange(0, inst.n_points, k)
    if idx.size < 2:
        raise ValueError(f"decimating {inst.n_points} points by {k} leaves fewer than 2")
    return Instance(inst.inputs[idx], inst.outputs[:, idx], inst.class_id, inst.source)


def decimate_dataset(ds: Dataset, keep_every: int) -> Dataset:
    return Dataset([[decimate(i, keep_every) for i in c] for c in ds.classes],
                   ds.class_names, ds.input_dim, ds.output_dim)
