# %% [markdown]
# # Whole-cell runs: scheduler combinations side by side
#
# The small ``quick`` preset squeezed to 5 downlink RBs on a poor channel, so
# the schedulers actually compete; runs take a few seconds each.
# The full sweeps are available from the command line (``crosslayer sweep``).

# %%
import numpy as np

from crosslayer.cli import apply_combo
from crosslayer.config import load_preset
from crosslayer.sim import run

base = load_preset("quick").replace(n_clients=4, dl_rbs=5, channel_profile="poor", duration_s=6.0)
combos = ["TU_TD", "APD_TU_TD", "TU_MAXCI", "TU_PF", "PF_RR"]
rows = []
for combo in combos:
    reps = [run(apply_combo(base, combo).replace(seed=s), "off") for s in (1, 2, 3)]
    rows.append((combo,
                 np.median([r.system_kbps for r in reps]),
                 np.median([r.total_rebuffer_s for r in reps]),
                 np.mean([r.mean_qr for r in reps])))

print(f"{'combo':10s} {'kbps':>8s} {'rebuf s':>8s} {'QR':>6s}")
for combo, kbps, reb, qr in rows:
    print(f"{combo:10s} {kbps:8.1f} {reb:8.3f} {qr:6.3f}")

# %% [markdown]
# Per-client view of one run.

# %%
rep = run(apply_combo(base, "APD_TU_TD"), "off")
for c in rep.clients:
    print({k: c[k] for k in ("client", "throughput_kbps", "rebuffer_s", "qr") if k in c})
