# %% [markdown]
# # Downlink RB allocation on a single TTI
#
# A small CQI grid, the TD greedy next to the baselines, and an exhaustive
# search over every assignment for reference.

# %%
import itertools

import numpy as np

from crosslayer.baselines import maxci_allocate, pf_allocate, rr_allocate
from crosslayer.channel import CQI_TO_MCS, RB_BYTES, CqiProcess, profile_means
from crosslayer.mac_downlink import td_allocate

rng = np.random.default_rng(4)
grid = CqiProcess(profile_means("average", 3), 4, rng).step().values
print(grid)

# %%
queues = [5000, 5000, 5000]
needs = [60, 0, 0]
for name, alloc in [
    ("td", td_allocate(grid, needs, queues)),
    ("maxci", maxci_allocate(grid, queues)),
    ("pf", pf_allocate(grid, queues, np.array([1e5, 2e5, 4e5]))),
    ("rr", rr_allocate(grid, queues)),
]:
    print(f"{name:6s} owner={alloc.owner.tolist()} mcs={alloc.mcs.tolist()} capacity={alloc.capacity.tolist()}")

# %% [markdown]
# All clients share one MCS across their RBs, set by their weakest RB, so
# grabbing a poor RB can cost more than it adds. Brute force over owners:

# %%
def total(owner):
    s = 0
    for k in range(grid.shape[0]):
        rbs = [n for n, o in enumerate(owner) if o == k]
        if rbs:
            s += len(rbs) * RB_BYTES[CQI_TO_MCS[int(grid[k, rbs].min())]]
    return s


best = max(itertools.product(range(-1, 3), repeat=grid.shape[1]), key=total)
print("exhaustive", best, total(best))
print("td        ", td_allocate(grid, [0, 0, 0], [10**9] * 3).total_capacity)
