"""Limited aperture through the config runner.

Sweeps the arc [0, theta_max] with reduced sizes and prints the table that
``python -m marfm report`` would print.  Outputs go to runs/aperture_demo.
"""

import math

from marfm import experiment

cfg = experiment.load_config("example8_aperture")
cfg.pop("sweep")
cfg["basis"]["M0"] = 800
cfg["wavenumbers"]["k_delta"] = 8
cfg["quadrature"]["max_iter"] = 3

values = [2 * math.pi, 1.5 * math.pi, math.pi, 0.5 * math.pi]
labels = ["2pi", "3pi/2", "pi", "pi/2"]
experiment.sweep(cfg, "layout.theta_max", values, "runs/aperture_demo", labels=labels)
print(experiment.report("runs/aperture_demo"))
