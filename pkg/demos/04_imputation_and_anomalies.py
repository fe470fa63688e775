"""Fill masked values, then flag injected spikes, with the same model family.

Run: python demos/04_imputation_and_anomalies.py   (under a minute on one core)
Writes demos/out/imputation.svg and demos/out/anomaly.svg.
"""
from pathlib import Path

import numpy as np

from tsfuse import ExperimentConfig, prepare_data, train
from tsfuse.plots import plot_anomaly, plot_imputation
from tsfuse.training import anomaly_eval, imputation_eval

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# %% Imputation: random masks each step, loss only on hidden positions.
cfg = ExperimentConfig(task="imputation", missing_rate=0.375, epochs=15)
data = prepare_data(cfg)
model, _ = train(cfg, data)
ev = imputation_eval(model, data, cfg.missing_rate, cfg.seed)
print(f"masked MSE: model {ev.model_mse:.4f} | mean fill {ev.baseline_mse:.4f}")
plot_imputation(ev.clean[0, 0], ev.mask[0, 0], ev.imputed[0, 0], out / "imputation.svg")

# %% Anomalies: predict the next patch from two observed ones and score the error.
cfg = ExperimentConfig(task="anomaly", epochs=50)
data = prepare_data(cfg)
model, _ = train(cfg, data)
for alpha in (0.9, 0.95, 0.99):
    an = anomaly_eval(model, data, alpha)
    flagged = an.report.starts[an.report.flagged].tolist()
    print(f"alpha {alpha}: tau {an.report.threshold:.4g}, flagged starts {flagged}, "
          f"precision {an.precision:.2f}, recall {an.recall:.2f}")
spikes = data.annotations["anomaly_starts"]
print("true spike starts:", spikes)
plot_anomaly(an.report.starts, an.report.scores, an.report.threshold, out / "anomaly.svg",
             truth_starts=list(np.asarray(spikes)))
