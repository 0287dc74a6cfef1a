# %% [markdown]
# # Video packet dropping ahead of a stall
#
# How much of a client's video queue has to go, and which packets, given the
# recent delivery rate and how much video is already buffered.

# %%
import numpy as np

from crosslayer.apd import ApdConfig, QueueSnapshot, drop_budget, estimate_rate, select_drop_set
from crosslayer.video_trace import generate_trace

seq = generate_trace(1, "foreman.cif")
packets = list(seq.segments[2])
sizes = np.array([p.size for p in packets])
imp = np.array([p.importance for p in packets])
print(len(packets), "packets,", sizes.sum(), "bytes in segment 3")
print("importance quartiles", np.round(np.quantile(imp, [0.25, 0.5, 0.75, 1.0]), 3))

# %%
rate = estimate_rate([90_000, 110_000, 95_000], 80_000)
for t_k in (0.0, 0.5, 1.0, 2.0):
    snap = QueueSnapshot(s_mac=20_000, s_send=10_000, s_vq=float(sizes.sum()), t_k=t_k)
    lam, need = drop_budget(rate, snap, ApdConfig())
    print(f"buffered {t_k:.1f} s  lambda={lam:.3f}  drop {need:.0f} B")

# %% [markdown]
# The byte target becomes a covering knapsack: least total importance whose
# sizes reach it. The bucketed solver is what the simulator uses.

# %%
snap = QueueSnapshot(20_000, 10_000, float(sizes.sum()), 0.5)
_, need = drop_budget(rate, snap)
pk = list(zip(imp, sizes))
exact = select_drop_set(pk, need, bucket=1)
coarse = select_drop_set(pk, need, bucket=64)
print("exact ", exact.n_dropped, exact.dropped_bytes, round(exact.dropped_importance, 4))
print("bucket", coarse.n_dropped, coarse.dropped_bytes, round(coarse.dropped_importance, 4))
dropped = imp[np.array(exact.drop_flags, dtype=bool)]
print("mean importance dropped vs kept:", dropped.mean().round(4), imp[~np.array(exact.drop_flags, dtype=bool)].mean().round(4))
