"""Train the prompt-fused model on a synthetic series and compare with a naive forecast.

Run: python demos/03_forecasting.py   (about half a minute on one core)
Writes demos/out/forecast.svg and demos/out/metrics.csv.
"""
from pathlib import Path

from tsfuse import ExperimentConfig, evaluate, prepare_data, train
from tsfuse.plots import plot_forecast
from tsfuse.training import forecast_eval

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

# %% Defaults: 2048 steps of sine + trend + noise, patches of 16, horizon 96.
cfg = ExperimentConfig(epochs=50)
data = prepare_data(cfg)
model, report = train(cfg, data)
trainable, total = model.param_counts()
print(f"trainable {trainable} of {total} parameters ({trainable / total:.1%})")
print("loss, first and last epoch:", report.epoch_losses[0], report.epoch_losses[-1])

# %% Test-split rollout versus repeating the last observed value.
report = evaluate(model, cfg, data, report)
print(f"model MSE {report.mse:.4f} | naive MSE {report.baseline_mse:.4f} "
      f"| ratio {report.mse / report.baseline_mse:.3f}")
report.write_csv(out / "metrics.csv")

ev = forecast_eval(model, data, cfg.horizon)
t = ev.origins[-1]
plot_forecast(data.full.values[0, t - model.context:t], ev.truth[-1, 0], ev.predictions[-1, 0],
              out / "forecast.svg")
print("wrote", out / "forecast.svg")
