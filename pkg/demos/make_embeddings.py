"""
Synthetic user and item embeddings for the recommender presets
===============================================================

The recsim presets read two comma-separated files: user embeddings (one row
per user) and item embeddings (one row per item), 5 columns each. Real
ratings data is not shipped, so this script fakes a low-rank factorization:
a rating matrix built from clustered item "genres" and user tastes, then
factored with a truncated SVD.

Run from the repository root:  python demos/make_embeddings.py
"""

from pathlib import Path

import numpy as np

rng = np.random.default_rng(2024)
rank, n_users, n_items, n_genres = 5, 600, 400, 4

# items: a few genres, each a tight cloud around its own direction
genre_centers = rng.normal(scale=1.2, size=(n_genres, rank))
genre = rng.integers(0, n_genres, size=n_items)
items = genre_centers[genre] + rng.normal(scale=0.3, size=(n_items, rank))

# users: tastes spread more broadly
users = rng.normal(scale=0.5, size=(n_users, rank))

# noisy ratings, centered, then re-factored so both sides share one scale
ratings = users @ items.T + rng.normal(scale=0.5, size=(n_users, n_items))
ratings -= ratings.mean()
u, s, vt = np.linalg.svd(ratings, full_matrices=False)
root = np.sqrt(s[:rank])
U = u[:, :rank] * root
V = vt[:rank].T * root

# rescale so a typical user-item score is of order one
scale = np.sqrt(np.abs(U @ V.T).mean())
U /= scale
V /= scale
print("user embeddings", U.shape, " item embeddings", V.shape)
print("score range", np.round((U @ V.T).min(), 2), "to", np.round((U @ V.T).max(), 2))

out = Path("data")
out.mkdir(exist_ok=True)
np.savetxt(out / "users.csv", U, delimiter=",", fmt="%.10g")
np.savetxt(out / "items.csv", V, delimiter=",", fmt="%.10g")
print("wrote", out / "users.csv", "and", out / "items.csv")
