"""Config-driven experiment runs, sweeps and report aggregation.

A config is a JSON document validated against ``configs/schema.json``.  One run
writes its own directory::

    config.json   resolved config
    metrics.csv   one row
    history.jsonl one record per solver iteration
    field.csv     numerical and reference source on the evaluation grid
    *.pgm         8-bit grayscale heatmaps (3D: z-slices stacked vertically)
    lcurve.csv    when lambda was selected by the L-curve
    mesh.csv      final quadrature cells
    mask.csv      detected regions (MA-RFM only)
"""

import copy
import csv
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import assembly, basis, harness, pipeline

METRIC_FIELDS = ["name", "label", "path", "status", "n_points", "n_k", "M_total", "n_integral",
                 "lambda_sq", "loss", "E_l2", "seconds", "error"]


class ConfigError(ValueError):
    """Schema or consistency violation; ``errors`` lists (field path, message)."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p or '<root>'}: {m}" for p, m in self.errors))


# --- config handling -------------------------------------------------------------

def load_schema():
    return json.loads(resources.files("marfm").joinpath("configs/schema.json").read_text())


def bundled_configs():
    names = [p.name[:-5] for p in resources.files("marfm").joinpath("configs").iterdir()
             if p.name.endswith(".json") and p.name != "schema.json"]
    return sorted(names)


def load_config(source):
    """Dict, path to a JSON file, or the name of a bundled config."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    p = Path(source)
    if p.exists():
        return json.loads(p.read_text())
    if str(source) in bundled_configs():
        return json.loads(resources.files("marfm").joinpath(f"configs/{source}.json").read_text())
    raise FileNotFoundError(f"no config file or bundled config named {source!r}")


def _path_of(err):
    return ".".join(str(p) for p in err.absolute_path)


def _leaf_errors(err):
    """For a failed oneOf, report the branch whose discriminator (a const) matched."""
    if err.validator != "oneOf" or not err.context:
        return [err]
    branches = {}
    for sub in err.context:
        branches.setdefault(sub.schema_path[0], []).append(sub)
    live = [errs for errs in branches.values() if not any(e.validator == "const" for e in errs)]
    if len(live) != 1:
        return [err]
    return [leaf for e in live[0] for leaf in _leaf_errors(e)]


def validate_config(cfg):
    validator = jsonschema.Draft202012Validator(load_schema())
    found = [leaf for e in validator.iter_errors(cfg) for leaf in _leaf_errors(e)]
    errors = [(_path_of(e), e.message) for e in sorted(found, key=_path_of)]
    if errors:
        raise ConfigError(errors)
    extra = []
    lo, hi = cfg["domain"]["lo"], cfg["domain"]["hi"]
    if len(lo) != len(hi) or any(b <= a for a, b in zip(lo, hi)):
        extra.append(("domain", "lo and hi must have equal length with lo < hi"))
    ks = cfg["wavenumbers"]
    if ks["mode"] == "arithmetic" and ks["k_max"] < ks["k_min"]:
        extra.append(("wavenumbers.k_max", "must be at least k_min"))
    lay = cfg["layout"]
    need = {"rectangle_boundary": ("box", "n_s"), "box_boundary": ("box", "n_s"),
            "circle_arc": ("radius", "n_s"), "circle_uniform": ("radius", "n_total")}[lay["geometry"]]
    extra += [(f"layout.{k}", f"required for geometry {lay['geometry']}") for k in need if k not in lay]
    if "extension" in lay:
        if lay["geometry"] != "circle_uniform":
            extra.append(("layout.extension", "needs a circle_uniform layout"))
        elif lay["extension"]["rho"] <= lay.get("radius", math.inf):
            extra.append(("layout.extension.rho", "must exceed the observation radius"))
    if cfg["solver"]["path"] == "ma_rfm" and "morphology" not in cfg:
        extra.append(("morphology", "required for solver path ma_rfm"))
    if "sweep" in cfg and "labels" in cfg["sweep"] and len(cfg["sweep"]["labels"]) != len(cfg["sweep"]["values"]):
        extra.append(("sweep.labels", "must match the number of values"))
    if extra:
        raise ConfigError(extra)
    return cfg


def set_path(cfg, dotted, value):
    """Return a copy of ``cfg`` with the dotted key set (intermediate dicts are created)."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


# --- building the problem --------------------------------------------------------

def _box(b):
    return tuple(float(v) for v in b["lo"]), tuple(float(v) for v in b["hi"])


def _wavenumbers(spec, delta):
    if spec["mode"] == "arithmetic":
        return harness.arithmetic_wavenumbers(spec["k_min"], spec["k_max"], spec["k_delta"])
    if spec["mode"] == "fourier":
        n = spec["N"] if spec["N"] is not None else harness.fourier_truncation(delta)
        return harness.fourier_wavenumbers(n, spec["half_width"], spec.get("k_star", 1.0))
    return assembly.WavenumberSet(tuple(sorted(spec["values"])))


def _layout(lay):
    g = lay["geometry"]
    if g == "rectangle_boundary":
        return harness.rectangle_layout(_box(lay["box"]), lay["n_s"])
    if g == "box_boundary":
        return harness.box_layout_3d(_box(lay["box"]), lay["n_s"])
    if g == "circle_arc":
        return harness.arc_layout(lay["radius"], lay["n_s"], lay.get("theta_max", 2 * math.pi))
    theta = 2 * math.pi * np.arange(lay["n_total"]) / lay["n_total"]
    return harness.extended_layout(lay["radius"], theta)


@dataclass
class Built:
    problem: pipeline.Problem
    reference: harness.ReferenceSource
    oracle_points: np.ndarray
    n_points: int
    delta: float
    extension_flags: list = field(default_factory=list)


def build_problem(cfg):
    """Synthesize noisy data for a validated config and wrap it as a Problem."""
    domain = _box(cfg["domain"])
    src = harness.make_source(cfg["source"]["kind"], **cfg["source"].get("params", {}))
    noise = cfg.get("noise", {})
    delta = float(noise.get("delta", 0.0))
    spec = harness.NoiseSpec(delta, int(noise.get("seed", 0)))
    ks = _wavenumbers(cfg["wavenumbers"], delta)
    lay_cfg = cfg["layout"]
    layout = _layout(lay_cfg)
    orc = cfg.get("oracle", {})
    rule = harness.oracle_rule(src, domain, orc.get("n_per_axis", 400 if len(domain[0]) == 2 else 120))
    ext = lay_cfg.get("extension")
    kinds = tuple(lay_cfg.get("kinds", ("dirichlet",) if ext else harness.KINDS))
    D, N = harness.forward_data(src, layout, ks.values, domain=domain, rule=rule, kinds=kinds,
                                check=orc.get("check", False))
    flags = []
    if ext:
        D = harness.add_noise(D, spec)
        Dr = np.zeros((len(ks), ext["n_generate"]), dtype=complex)
        Nr = np.zeros_like(Dr)
        for ik, k in enumerate(ks.values):
            e = harness.circular_extension(D[ik], k, lay_cfg["radius"], ext["rho"],
                                           ext.get("max_mode"), ext["n_generate"])
            Dr[ik], Nr[ik] = e.values, e.normal_derivatives
            flags.extend(int(n) for n in getattr(e, "dropped", ()) or ())
        pts = harness.extended_layout(ext["rho"], e.theta).points()
        data = assembly.data_from_arrays(Dr, Nr, pts)
    else:
        D, N = harness.add_noise((D, N), spec)
        pts = layout.points(kinds)
        data = assembly.data_from_arrays(D if "dirichlet" in kinds else None,
                                         N if "neumann" in kinds else None, pts)
    weights = tuple(cfg["solver"].get("block_weights", (1.0, 1.0)))
    problem = pipeline.Problem(domain, ks, pts, data, weights)
    return Built(problem, src, rule[0], len(layout.x), delta, sorted(set(flags)))


def _ia_config(cfg):
    q = cfg.get("quadrature", {})
    reg = cfg.get("regularization", {})
    irfm = cfg["solver"]["path"] == "irfm"
    grid = reg.get("grid")
    return pipeline.IAConfig(cells_per_axis=q.get("cells", 5), n_gauss=q.get("n", 5),
                             gammas=(q.get("gamma_abs", 1.0), q.get("gamma_grad", 1.0)),
                             c=q.get("c", 1.0), eps=q.get("eps", 1e-2),
                             max_iter=0 if irfm else q.get("max_iter", 10),
                             lambda_sq=reg.get("lambda_sq"),
                             lambda_grid=tuple(grid) if grid else None,
                             reselect_lambda=reg.get("reselect", False),
                             max_points=q.get("max_points"))


def _ma_config(cfg, delta):
    m = cfg["morphology"]
    windows = basis.MorphologyWindows(
        eps_c=m.get("eps_c", 0.03), eps_r=m.get("eps_r", 0.10), eps_width=m.get("eps_width", 0.20),
        eps_height=m.get("eps_height", 0.15),
        sharpness_range=(m.get("K_min", 1000.0), m.get("K_max", 20000.0)))
    kinds = m.get("region_kinds", ["sigmoid_circle"])
    flat = [k for row in kinds for k in (row if isinstance(row, list) else [row])]
    counts = m.get("counts") or {k: 400 for k in flat}
    eps_res = m.get("eps_res", m.get("eps_res_factor", 0.0) * delta)
    return pipeline.MAConfig(region_kinds=kinds, counts=counts, t_abs=m.get("t_abs", 0.5),
                             t_grad=m.get("t_grad", 0.5), mode=m.get("mode", "abs"), windows=windows,
                             eps_res=eps_res, max_rounds=m.get("I_max", 1),
                             reselect_lambda=m.get("reselect_lambda", False),
                             fwhm_rule=m.get("fwhm_rule", "linear"), seed=m.get("seed", 1))


# --- dumps -------------------------------------------------------------------------

def write_pgm(path, image):
    """Binary 8-bit grayscale PGM; ``image`` is (rows, cols) already in [0, 1]."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    data = np.round(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes(order="C"))


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, vmax = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w), vmax


def _image(values, shape):
    """Grid values -> image rows (x1 pointing up); 3D slices along x2 are stacked."""
    v = np.asarray(values).reshape(shape)
    if len(shape) == 2:
        return v.T[::-1]
    return np.vstack([v[:, :, i].T[::-1] for i in range(shape[2])])


def _scaled(img, lo, hi):
    return (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)


def _dump_fields(out, model, reference, domain, resolution):
    pts, _, shape = pipeline.eval_grid(domain, resolution)
    num = model.evaluate(pts)
    ref = np.asarray(reference(pts), dtype=float)
    d = pts.shape[1]
    header = ",".join([f"x{a}" for a in range(d)] + ["S_num", "S_ref"])
    np.savetxt(out / "field.csv", np.column_stack([pts, num, ref]), delimiter=",", header=header,
               comments="", fmt="%.10g")
    lo = min(num.min(), ref.min())
    hi = max(num.max(), ref.max())
    write_pgm(out / "heatmap_num.pgm", _scaled(_image(num, shape), lo, hi))
    write_pgm(out / "heatmap_ref.pgm", _scaled(_image(ref, shape), lo, hi))
    err = np.abs(num - ref)
    write_pgm(out / "heatmap_err.pgm", _scaled(_image(err, shape), 0.0, err.max()))
    diff = num - ref
    return float(np.sqrt(np.sum(diff * diff)) / np.sqrt(np.sum(ref * ref)))


# --- running -----------------------------------------------------------------------

def _strip_timings(rec):
    return {k: v for k, v in rec.items() if k != "seconds"}


def run_single(cfg, out_dir, label=""):
    """Run one validated config into ``out_dir``; failures are recorded, not raised."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = cfg.get("output", {}).get("timings", True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    row = dict.fromkeys(METRIC_FIELDS, "")
    row.update(name=cfg["name"], label=label, path=cfg["solver"]["path"], status="ok")
    t0 = time.perf_counter()
    try:
        built = build_problem(cfg)
        prob = built.problem
        b = cfg.get("basis", {})
        std = b.get("standardize", True)
        bs = basis.build_random_set(b.get("M0", 1600), b.get("R_m", 20.0), b.get("activation", "sin"),
                                    b.get("seed", 0), prob.dim, prob.domain if std else None)
        ia = _ia_config(cfg)
        with open(out / "history.jsonl", "w") as log:
            if cfg["solver"]["path"] == "ma_rfm":
                res = pipeline.run_ma_rfm(prob, bs, ia, _ma_config(cfg, built.delta), built.reference)
            else:
                res = pipeline.run_ia_rfm(prob, bs, ia, built.reference)
            for rec in res.history:
                log.write(json.dumps(rec if timings else _strip_timings(rec)) + "\n")
        harness.assert_disjoint(res.mesh.points, built.oracle_points)
        res.mesh.to_csv(out / "mesh.csv")
        if res.lcurve is not None:
            res.lcurve.to_csv(out / "lcurve.csv")
        if getattr(res, "mask", None) is not None:
            res.mask.to_csv(out / "mask.csv")
        resolution = cfg.get("evaluation", {}).get("resolution", pipeline.default_resolution(prob.dim))
        e = _dump_fields(out, res.model, built.reference, prob.domain, resolution)
        row.update(n_points=built.n_points, n_k=len(prob.ks), M_total=res.model.basis.size,
                   n_integral=res.mesh.n_points, lambda_sq=repr(float(res.lambda_sq)),
                   loss=repr(float(res.loss)), E_l2=repr(e))
        if built.extension_flags:
            row["error"] = f"dropped extension modes {built.extension_flags}"
    except Exception as exc:  # captured in the report by design
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        (out / "traceback.txt").write_text(traceback.format_exc())
    if timings:
        row["seconds"] = f"{time.perf_counter() - t0:.3f}"
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, METRIC_FIELDS)
        w.writeheader()
        w.writerow(row)
    return row


def _slug(value):
    s = json.dumps(value) if not isinstance(value, str) else value
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s)[:40]


def _run_job(args):
    cfg, path, label = args
    return run_single(cfg, path, label)


def _fan_out(jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def sweep(config, param, values, out_dir=None, labels=None, workers=1):
    """One run per value of the dotted ``param``, each in its own subdirectory."""
    cfg = validate_config(load_config(config))
    cfg.pop("sweep", None)
    out = Path(out_dir or cfg.get("output", {}).get("dir", f"runs/{cfg['name']}"))
    labels = list(labels) if labels else [f"{param}={_slug(v)}" for v in values]
    jobs = []
    for i, (v, lab) in enumerate(zip(values, labels)):
        c = validate_config(set_path(cfg, param, v))
        jobs.append((c, str(out / f"{i:02d}_{_slug(lab)}"), lab))
    rows = _fan_out(jobs, workers)
    report(out)
    return rows


def run_experiment(config, out_dir=None, workers=1):
    """Validate and run a config (expanding its ``sweep`` block); returns metric rows."""
    cfg = validate_config(load_config(config))
    out = Path(out_dir or cfg.get("output", {}).get("dir", f"runs/{cfg['name']}"))
    if "sweep" in cfg:
        sw = cfg["sweep"]
        return sweep(cfg, sw["param"], sw["values"], out, sw.get("labels"), workers)
    rows = [run_single(cfg, out)]
    report(out)
    return rows


# --- reporting ---------------------------------------------------------------------

def _fmt(v, pct=False):
    if v in ("", None):
        return "-"
    x = float(v)
    return f"{100 * x:.3f}%" if pct else (f"{x:.2e}" if abs(x) < 1e-2 or abs(x) >= 1e5 else f"{x:g}")


def report(run_dir):
    """Collect every metrics.csv below ``run_dir`` into summary.csv and a text table."""
    root = Path(run_dir)
    rows = []
    for p in sorted(root.rglob("metrics.csv")):
        with open(p, newline="") as fh:
            for r in csv.DictReader(fh):
                r["dir"] = os.path.relpath(p.parent, root)
                rows.append(r)
    if not rows:
        raise FileNotFoundError(f"no metrics.csv below {root}")
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["dir"] + METRIC_FIELDS)
        w.writeheader()
        w.writerows(rows)
    head = ["Method", "Run", "N_points", "n_integral", "M", "lambda^2", "E_l2(S)"]
    body = []
    for r in sorted(rows, key=lambda r: (r["path"], r["dir"])):
        run = r["label"] or r["dir"]
        if r["status"] != "ok":
            body.append([r["path"].upper(), run, "-", "-", "-", "-", "failed"])
            continue
        body.append([r["path"].upper(), run, r["n_points"], r["n_integral"], r["M_total"],
                     _fmt(r["lambda_sq"]), _fmt(r["E_l2"], pct=True)])
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    text = "\n".join([line(head), line(["-" * w for w in widths])] + [line(b) for b in body])
    (root / "summary.txt").write_text(text + "\n")
    return text
