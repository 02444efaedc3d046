# %% [markdown]
# # Ablations as sweeps
#
# The harness expands a base run configuration along one axis, executes each
# point once (identical configurations are shared), and writes TSV, JSON and
# a plot. Run directories are content-addressed; a re-run with the same
# ``run_root`` resumes instead of retraining. The same sweeps are available
# from the command line:
#
#     python3 -m deepprompt sweep --axis depth_interval --values 1,2,4 --repeats 3 --out reports
#     python3 -m deepprompt report reports/depth_interval.report.json --out reports --formats tsv,plot

# %%
import tempfile
from pathlib import Path

from deepprompt.harness import RunConfig, depth_ablation, emit_report, length_sweep

base = RunConfig()  # desk defaults: 4 layers, hidden 64, 30 epochs, L=8
out = Path(tempfile.mkdtemp())
print("base run id:", base.run_id())

# %% [markdown]
# Depth: prompts on only the first k layers ("ascending") or only the last k
# ("descending"). Parameter counts match within each k. At k equal to the
# depth both orders are the same run. The sign of descending minus ascending
# is recorded, never asserted: on a random frozen backbone the early layers
# tend to win, which need not hold for a pretrained one.

# %%
depth = depth_ablation([1, 2, 4], base, repeats=1, run_root=out / "runs")
for row in depth.rows:
    print(f"k={row.axis_value} {row.order:10s} layers {row.variant:4s} acc {row.metric:.3f} params {row.params}")
print("observed descending minus ascending:", depth.metadata["observed_descending_vs_ascending"])
print("written:", {k: p.name for k, p in emit_report(depth, out).items()})

# %% [markdown]
# Prompt length, without and with an MLP encoder.

# %%
lengths = length_sweep([1, 4, 16], ["none", "mlp"], base, repeats=1, run_root=out / "runs")
for point in lengths.summary():
    print(f"L={point['axis_value']:<3} {point['variant']:4s} acc {point['mean']:.3f} params {point['params']}")
print("written:", {k: p.name for k, p in emit_report(lengths, out).items()})
