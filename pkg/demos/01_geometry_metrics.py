"""Tour of the geometric kernels: set distances, sampling, neighborhoods.

Run with: python3 demos/01_geometry_metrics.py
"""

import numpy as np

from pointadapt import geometry as geo

rng = np.random.default_rng(0)

# Two toy clouds: a unit-ish blob and a shifted copy with extra scatter.
a = rng.normal(size=(64, 3)) * 0.4
b = np.concatenate([a + [0.05, 0.0, 0.0], rng.normal(size=(16, 3))])

# --- the three evaluation metrics --------------------------------------------
# Chamfer distance: squared nearest-neighbor distances, averaged per point
# in each direction, directions summed. Reported scaled by 1e4.
cd = geo.chamfer_distance(a, b)
print(f"CD   raw={cd.raw:.6f}  scaled(x1e4)={cd.scaled:.2f}")

# Unidirectional Chamfer: how well b covers a (partial -> prediction).
ucd = geo.unidirectional_chamfer(a, b)
print(f"UCD  raw={ucd.raw:.6f}  scaled(x1e4)={ucd.scaled:.2f}")

# Unidirectional Hausdorff: the worst uncovered point of a (not squared).
uhd = geo.unidirectional_hausdorff(a, b)
print(f"UHD  raw={uhd.raw:.6f}  scaled(x1e2)={uhd.scaled:.2f}")

# A subset is perfectly covered: UCD and UHD vanish.
subset = a[:10]
print("subset UCD:", geo.unidirectional_chamfer(subset, a).raw)
print("subset UHD:", geo.unidirectional_hausdorff(subset, a).raw)

# --- farthest point sampling ---------------------------------------------------
# Greedy max-min selection; deterministic, ties broken by lowest index.
line = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [10.0, 0, 0]])
idx = geo.farthest_point_sample(line, 2, seed_index=0)
print("FPS of {0,1,2,10} with k=2 picks x =", line[idx][:, 0])

# --- k nearest neighbors ---------------------------------------------------------
query = np.array([[0.4, 0, 0]])
neighbors = geo.knn_indices(line, query, k=2)
print("2-NN of x=0.4 in {0,1,2,10}:", line[neighbors[0]][:, 0])

# --- resampling to a fixed resolution --------------------------------------------
# Downsampling goes through FPS; a deficit duplicates points uniformly.
down = geo.resample(a, 16)
up = geo.resample(a, 100, seed=1)
print("resample 64 -> 16:", down.shape, " 64 -> 100:", up.shape)
print("upsampled cloud still covers the original exactly:",
      geo.unidirectional_chamfer(a, up).raw == 0.0)
