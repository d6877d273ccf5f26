"""Regenerate the synthetic preference fixture shipped with the package.

Two equal-size user groups with complementary tastes over 20 items: group 0
prefers items 0-9, group 1 prefers items 10-19, each with a graded profile.
About 30% of the entries are marked observed; the rest play the role of
imputed values.
"""

import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "trialoffer" / "data"


def profile(n_items=20):
    half = n_items // 2
    liked = np.linspace(0.9, 0.7, half)
    disliked = np.linspace(0.3, 0.1, half)
    a = np.concatenate([liked, disliked])
    b = np.concatenate([disliked, liked])
    return np.vstack([a, b])


def main(seed=20240601, users_per_group=20, n_items=20, observed_frac=0.3, noise=0.03):
    rng = np.random.default_rng(seed)
    prof = profile(n_items)
    groups = np.repeat([0, 1], users_per_group)
    gamma = np.clip(prof[groups] + rng.normal(0, noise, (groups.size, n_items)), 0.0, 1.0)
    mask = rng.random(gamma.shape) < observed_frac
    for u in np.flatnonzero(~mask.any(axis=1)):
        mask[u, rng.integers(n_items)] = True
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "synthetic_2x20.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "value", "observed"])
        for u in range(gamma.shape[0]):
            for j in range(n_items):
                w.writerow([u, j, f"{gamma[u, j]:.4f}", int(mask[u, j])])
    with open(OUT / "synthetic_2x20_groups.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "group"])
        for u, g in enumerate(groups):
            w.writerow([u, int(g)])


if __name__ == "__main__":
    main()
