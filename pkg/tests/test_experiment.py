import hashlib
import json
import math

import numpy as np
import pytest

from marfm import experiment as ex
from marfm.__main__ import main


def tiny(**over):
    cfg = {
        "name": "tiny",
        "domain": {"lo": [-0.3, -0.3], "hi": [0.3, 0.3]},
        "source": {"kind": "gaussian", "params": {"center": [0.05, -0.02], "decay": 40.0}},
        "wavenumbers": {"mode": "arithmetic", "k_min": 1, "k_max": 13, "k_delta": 4},
        "layout": {"geometry": "circle_arc", "radius": 0.5, "n_s": 6},
        "oracle": {"n_per_axis": 60},
        "noise": {"delta": 0.01, "seed": 2},
        "solver": {"path": "ia_rfm"},
        "basis": {"M0": 60, "R_m": 3, "activation": "tanh", "seed": 0},
        "quadrature": {"cells": 2, "n": 4, "max_iter": 1},
        "regularization": {"lambda_sq": 1e-8},
        "evaluation": {"resolution": 24},
        "output": {"timings": False},
    }
    for k, v in over.items():
        cfg = ex.set_path(cfg, k, v)
    return cfg


def test_bundled_configs_validate():
    names = ex.bundled_configs()
    assert {"table1_ia_rfm", "example8_aperture", "example3_disc"} <= set(names)
    for n in names:
        ex.validate_config(ex.load_config(n))


def test_table1_sweeps_four_observation_counts():
    cfg = ex.load_config("table1_ia_rfm")
    assert cfg["sweep"]["param"] == "layout.n_total"
    assert cfg["sweep"]["values"] == [50, 100, 200, 400]
    assert cfg["wavenumbers"]["N"] == 6


def test_aperture_config_sweeps_theta_max():
    cfg = ex.load_config("example8_aperture")
    vals = np.array(cfg["sweep"]["values"]) / math.pi
    assert np.allclose(vals, [2.0, 1.5, 1.0, 0.5], rtol=1e-15)


def test_empty_wavenumber_list_rejected():
    cfg = tiny()
    cfg["wavenumbers"] = {"mode": "list", "values": []}
    with pytest.raises(ex.ConfigError) as info:
        ex.validate_config(cfg)
    assert info.value.errors == [("wavenumbers.values", "[] should be non-empty")]


def test_unknown_wavenumber_mode_keeps_generic_error():
    cfg = tiny()
    cfg["wavenumbers"] = {"mode": "geometric", "values": [1.0]}
    with pytest.raises(ex.ConfigError) as info:
        ex.validate_config(cfg)
    assert [p for p, _ in info.value.errors] == ["wavenumbers"]


def test_errors_carry_field_paths():
    cfg = tiny(**{"noise.delta": -0.5, "quadrature.n": 0})
    with pytest.raises(ex.ConfigError) as info:
        ex.validate_config(cfg)
    paths = {p for p, _ in info.value.errors}
    assert {"noise.delta", "quadrature.n"} <= paths


@pytest.mark.parametrize("over, where", [
    ({"domain.hi": [0.3, -0.4]}, "domain"),
    ({"layout.geometry": "rectangle_boundary"}, "layout.box"),
    ({"solver.path": "ma_rfm"}, "morphology"),
])
def test_consistency_errors(over, where):
    with pytest.raises(ex.ConfigError) as info:
        ex.validate_config(tiny(**over))
    assert any(p == where for p, _ in info.value.errors)


def test_set_path_copies():
    cfg = tiny()
    out = ex.set_path(cfg, "noise.delta", 0.2)
    assert out["noise"]["delta"] == 0.2 and cfg["noise"]["delta"] == 0.01


def test_pgm_roundtrip(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    ex.write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    back, vmax = ex.read_pgm(tmp_path / "a.pgm")
    assert vmax == 255 and np.array_equal(back, np.round(img * 255).astype(np.uint8))


def test_image_orientation_and_slices():
    v = np.arange(6.0).reshape(2, 3)  # axis 0 is x0
    img = ex._image(v.ravel(), (2, 3))
    assert img.shape == (3, 2) and img[-1, 0] == v[0, 0] and img[0, 1] == v[1, 2]
    v3 = np.arange(24.0).reshape(2, 3, 4)
    assert ex._image(v3.ravel(), (2, 3, 4)).shape == (12, 2)


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_run_writes_bundle_and_is_bit_stable(tmp_path):
    rows = ex.run_experiment(tiny(), tmp_path / "a")
    assert rows[0]["status"] == "ok", rows[0]["error"]
    for f in ("config.json", "metrics.csv", "history.jsonl", "field.csv", "heatmap_num.pgm",
              "heatmap_ref.pgm", "heatmap_err.pgm", "mesh.csv", "summary.csv", "summary.txt"):
        assert (tmp_path / "a" / f).exists(), f
    hist = [json.loads(line) for line in (tmp_path / "a" / "history.jsonl").read_text().splitlines()]
    assert [r["iteration"] for r in hist] == list(range(len(hist))) and "seconds" not in hist[0]
    field = np.loadtxt(tmp_path / "a" / "field.csv", delimiter=",", skiprows=1)
    assert field.shape == (24 * 24, 4)
    # the reported error is the metric recomputed from the dumped field
    e = np.linalg.norm(field[:, 2] - field[:, 3]) / np.linalg.norm(field[:, 3])
    assert float(rows[0]["E_l2"]) == pytest.approx(e, rel=1e-6)
    ex.run_experiment(tiny(), tmp_path / "b")
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_lcurve_dump_when_lambda_free(tmp_path):
    cfg = tiny(**{"regularization.lambda_sq": None, "quadrature.max_iter": 0})
    ex.run_experiment(cfg, tmp_path)
    lines = (tmp_path / "lcurve.csv").read_text().splitlines()
    assert lines[0].startswith("lambda_sq")


def test_failure_is_captured(tmp_path):
    # one Gauss point at the box centre (0.1, 0) and a sensor at theta = 0 on the same spot
    cfg = tiny(**{"domain.hi": [0.5, 0.3], "layout.radius": 0.1, "quadrature.cells": 1,
                  "quadrature.n": 1})
    rows = ex.run_experiment(cfg, tmp_path)
    assert rows[0]["status"] == "failed" and rows[0]["error"]
    assert (tmp_path / "traceback.txt").exists()
    assert "failed" in ex.report(tmp_path)


def test_sweep_and_report(tmp_path):
    rows = ex.sweep(tiny(), "noise.delta", [0.0, 0.05], tmp_path, workers=2)
    assert [r["label"] for r in rows] == ["noise.delta=0.0", "noise.delta=0.05"]
    text = ex.report(tmp_path)
    assert text.count("IA_RFM") == 2 and "E_l2(S)" in text
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 3


def test_extension_layout_runs(tmp_path):
    cfg = tiny(**{"layout": {"geometry": "circle_uniform", "radius": 0.5, "n_total": 24,
                             "extension": {"rho": 0.6, "n_generate": 32}},
                  "quadrature.max_iter": 0})
    rows = ex.run_experiment(cfg, tmp_path)
    assert rows[0]["status"] == "ok", rows[0]["error"]
    assert rows[0]["n_points"] == 24


def test_cli(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(tiny(**{"quadrature.max_iter": 0})))
    assert main(["run", str(path), "--out", str(tmp_path / "r")]) == 0
    assert main(["sweep", str(path), "--param", "basis.M0", "--values", "30", "40",
                 "--out", str(tmp_path / "s")]) == 0
    assert main(["report", str(tmp_path / "s")]) == 0
    assert "IA_RFM" in capsys.readouterr().out
    bad = tiny()
    bad["wavenumbers"] = {"mode": "list", "values": []}
    path.write_text(json.dumps(bad))
    assert main(["run", str(path)]) == 2
    assert "wavenumbers" in capsys.readouterr().err
