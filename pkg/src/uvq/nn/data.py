"""Seeded synthetic datasets for the toy network zoo."""
from dataclasses import dataclass

import numpy as np

SPLITS = ("train", "calib", "test")


@dataclass(frozen=True)
class Dataset:
    name: str
    task: str
    splits: dict  # split tag -> (inputs, targets)

    def split(self, tag):
        if tag not in self.splits:
            raise KeyError(f"{self.name}: no split {tag!r}")
        return self.splits[tag]

    @property
    def num_classes(self):
        return self.splits["train"][1].shape[1] if self.task == "classification" else None


def _one_hot(labels, n):
    out = np.zeros((len(labels), n))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _build(name, task, gen, sizes, seed):
    rng = np.random.default_rng(seed)
    return Dataset(name, task, {tag: gen(rng, size) for tag, size in zip(SPLITS, sizes)})


def two_clusters(seed=0, sizes=(1024, 512, 2048), turns=1.5, noise=0.12):
    """Two interleaved spiral-arm clusters in 2-D, one per class."""

    def gen(rng, m):
        labels = rng.integers(0, 2, m)
        r = np.sqrt(rng.uniform(0.02, 1.0, m))
        theta = 2 * np.pi * turns * r + labels * np.pi
        pts = 2.0 * r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        pts += rng.normal(0, noise, (m, 2))
        return pts, _one_hot(labels, 2)

    return _build("two-clusters", "classification", gen, sizes, seed)


def spirals(seed=0, sizes=(2048, 512, 2048), arms=3, noise=0.08):
    """``arms`` interleaved 2-D spirals, one class per arm."""

    def gen(rng, m):
        labels = rng.integers(0, arms, m)
        r = np.sqrt(rng.uniform(0.02, 1.0, m))
        theta = 2.2 * np.pi * r + labels * (2 * np.pi / arms)
        pts = 2.0 * r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        pts += rng.normal(0, noise, (m, 2))
        return pts, _one_hot(labels, arms)

    return _build("spirals", "classification", gen, sizes, seed)


def patterns(seed=0, sizes=(2048, 512, 1024), noise=0.3):
    """8x8 single-channel images of four stroke patterns at random offsets."""

    def gen(rng, m):
        labels = rng.integers(0, 4, m)
        imgs = np.zeros((m, 1, 8, 8))
        r = rng.integers(1, 7, m)
        c = rng.integers(1, 7, m)
        idx = np.arange(-1, 2)
        for j in range(m):
            if labels[j] == 0:
                imgs[j, 0, r[j], c[j] + idx] = 1.0
            elif labels[j] == 1:
                imgs[j, 0, r[j] + idx, c[j]] = 1.0
            elif labels[j] == 2:
                imgs[j, 0, r[j] + idx, c[j] + idx] = 1.0
            else:
                imgs[j, 0, r[j] + idx, c[j] - idx] = 1.0
        imgs += rng.normal(0, noise, imgs.shape)
        return imgs, _one_hot(labels, 4)

    return _build("patterns", "classification", gen, sizes, seed)


def signals(seed=0, sizes=(1024, 512, 1024), dim=16, rank=3, noise=0.05):
    """Low-rank smooth signals for the autoencoder (targets equal inputs)."""
    basis_rng = np.random.default_rng(10_000 + seed)
    grid = np.linspace(0, 1, dim)
    freqs = basis_rng.uniform(0.5, 3.0, rank)
    phases = basis_rng.uniform(0, 2 * np.pi, rank)
    basis = np.sin(2 * np.pi * freqs[:, None] * grid[None, :] + phases[:, None])

    def gen(rng, m):
        coef = rng.normal(0, 1, (m, rank))
        x = coef @ basis + rng.normal(0, noise, (m, dim))
        return x, x.copy()

    return _build("signals", "regression", gen, sizes, seed)
