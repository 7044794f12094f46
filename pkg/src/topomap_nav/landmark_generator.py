"""Conditional VAE that turns a 3x3 map patch and a direction into an observation slice.

The encoder sees ``(x, c)`` and emits ``(mu, logvar)``; the decoder sees
``(z, c)`` and emits per-feature Bernoulli logits. ``c`` is the flattened patch
followed by the direction one-hot. Panoramas are assembled from 8 independent
per-direction generations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .errors import NumericError, ParameterError, StateError, TrainingError
from .maze_world import (
    DEFAULT_DEPTH,
    FEATURES_PER_DIRECTION,
    Action,
    Cell,
    Direction,
    OccupancyGrid,
    extract_patch,
    render_direction,
    render_panorama,
    step,
)

log = logging.getLogger(__name__)

N_DIRECTIONS = len(Direction)
COND_DIM = 9 + N_DIRECTIONS


def condition_vector(patch, d) -> np.ndarray:
    c = np.zeros(COND_DIM)
    c[:9] = np.asarray(patch, dtype=np.float64).reshape(9)
    c[9 + int(d)] = 1.0
    return c


@dataclass
class GeneratorDataset:
    x: np.ndarray  # (N, F) direction slices
    patches: np.ndarray  # (N, 9) uint8
    dirs: np.ndarray  # (N,) int
    cells: np.ndarray  # (N, 2) int, where the slice was rendered
    maze_index: np.ndarray  # (N,) int
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.dirs)

    def conditions(self) -> np.ndarray:
        c = np.zeros((len(self), COND_DIM))
        c[:, :9] = self.patches
        c[np.arange(len(self)), 9 + self.dirs] = 1.0
        return c

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for x, p, d in zip(self.x, self.patches, self.dirs):
                fh.write(json.dumps({"x": [float(v) for v in x], "patch": [int(v) for v in p], "dir": int(d)}) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> GeneratorDataset:
        xs, ps, ds = [], [], []
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            xs.append(rec["x"])
            ps.append(rec["patch"])
            ds.append(rec["dir"])
        n = len(ds)
        return cls(
            np.array(xs, dtype=np.float64).reshape(n, -1),
            np.array(ps, dtype=np.uint8).reshape(n, 9),
            np.array(ds, dtype=int),
            np.full((n, 2), -1, dtype=int),
            np.full(n, -1, dtype=int),
            {"source": str(path)},
        )


def collect_dataset(
    mazes: list[OccupancyGrid],
    n_samples: int,
    depth: int = DEFAULT_DEPTH,
    palette_seed: int | None = 0,
    seed: int = 0,
) -> GeneratorDataset:
    """Random-walk data collection: every visited cell yields one record per direction."""
    if not mazes:
        raise ParameterError("need at least one maze")
    if n_samples <= 0:
        raise ParameterError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    n_visits = -(-n_samples // N_DIRECTIONS)
    xs, ps, ds, cs, ms = [], [], [], [], []
    per_maze = -(-n_visits // len(mazes))
    visits = 0
    for mi, grid in enumerate(mazes):
        free = grid.free_cells()
        s = free[rng.integers(len(free))]
        for _ in range(min(per_maze, n_visits - visits)):
            patch = extract_patch(grid, s).reshape(9)
            for d in Direction:
                xs.append(render_direction(grid, s, d, depth, palette_seed))
                ps.append(patch)
                ds.append(int(d))
                cs.append(tuple(s))
                ms.append(mi)
            visits += 1
            s = step(grid, s, Action(rng.integers(4)))
    order = rng.permutation(len(ds))[:n_samples]
    return GeneratorDataset(
        np.array(xs)[order],
        np.array(ps, dtype=np.uint8)[order],
        np.array(ds, dtype=int)[order],
        np.array(cs, dtype=int)[order],
        np.array(ms, dtype=int)[order],
        {"n_mazes": len(mazes), "n_samples": n_samples, "depth": depth, "palette_seed": palette_seed, "seed": seed},
    )


@dataclass
class CVAE:
    enc: nn_core.Network
    dec: nn_core.Network
    latent_dim: int

    @property
    def feature_dim(self) -> int:
        return self.dec.out_dim


def init_cvae(feature_dim: int = FEATURES_PER_DIRECTION, latent_dim: int = 8, hidden: int = 64, seed: int = 0) -> CVAE:
    enc = nn_core.init_network([feature_dim + COND_DIM, hidden, hidden, 2 * latent_dim], ["relu", "relu", "linear"], seed)
    dec = nn_core.init_network([latent_dim + COND_DIM, hidden, hidden, feature_dim], ["relu", "relu", "sigmoid"], seed + 1)
    return CVAE(enc, dec, latent_dim)


def cvae_loss(enc: nn_core.Network, dec: nn_core.Network, x, c, eps, with_grads: bool = False):
    """Negative evidence lower bound, averaged over the batch.

    Returns ``(loss, kl, rec)``; with ``with_grads`` also the encoder and
    decoder gradient lists. KL uses the closed Gaussian form against N(0, I);
    reconstruction is binary cross-entropy summed over features.
    """
    x, c, eps = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (x, c, eps))
    bsz = x.shape[0]
    latent = eps.shape[1]
    stats, ecache = nn_core.forward(enc, np.hstack([x, c]))
    mu, logvar = stats[:, :latent], stats[:, latent:]
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    _, dcache = nn_core.forward(dec, np.hstack([z, c]))
    logits = dcache.preacts[-1]
    kl_i = 0.5 * np.sum(mu**2 + std**2 - 1.0 - logvar, axis=1)
    rec_i = np.sum(np.logaddexp(0.0, logits) - x * logits, axis=1)
    kl, rec = float(kl_i.mean()), float(rec_i.mean())
    loss = kl + rec
    if not np.isfinite(loss):
        raise NumericError("non-finite CVAE loss")
    if not with_grads:
        return loss, kl, rec
    dlogits = (nn_core.sigmoid(logits) - x) / bsz
    dec_grads, dzc = nn_core.backward(dec, dcache, dlogits, wrt_preact=True)
    dz = dzc[:, :latent]
    dmu = dz + mu / bsz
    dlogvar = dz * eps * 0.5 * std + 0.5 * (std**2 - 1.0) / bsz
    enc_grads, _ = nn_core.backward(enc, ecache, np.hstack([dmu, dlogvar]))
    return loss, kl, rec, enc_grads, dec_grads


@dataclass
class CVAEHyper:
    epochs: int = 50
    batch: int = 32
    lr: float = 1e-3
    latent_dim: int = 8
    hidden: int = 64
    seed: int = 0


def train_cvae(dataset: GeneratorDataset, hyper: CVAEHyper = CVAEHyper()) -> tuple[CVAE, list[float]]:
    """Minibatch Adam on the batch-mean loss; fresh noise per example per step."""
    if len(dataset) == 0:
        raise ParameterError("empty dataset")
    model = init_cvae(dataset.x.shape[1], hyper.latent_dim, hyper.hidden, hyper.seed)
    rng = np.random.default_rng(hyper.seed + 7)
    params = model.enc.params() + model.dec.params()
    opt = nn_core.adam_init(params, hyper.lr)
    x_all, c_all = dataset.x, dataset.conditions()
    trace = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), hyper.batch):
            idx = order[start : start + hyper.batch]
            eps = rng.standard_normal((len(idx), model.latent_dim))
            try:
                loss, kl, _, ge, gd = cvae_loss(model.enc, model.dec, x_all[idx], c_all[idx], eps, with_grads=True)
            except NumericError as exc:
                raise TrainingError(f"CVAE diverged in epoch {epoch}") from exc
            assert kl >= 0.0, kl
            nn_core.adam_update(params, ge + gd, opt)
            total += loss * len(idx)
        trace.append(total / len(order))
        log.debug("cvae epoch %d loss %.4f", epoch, trace[-1])
    return model, trace


def generate_direction(model: CVAE | nn_core.Network, patch, d, z=None) -> np.ndarray:
    dec = model.dec if isinstance(model, CVAE) else model
    if not isinstance(dec, nn_core.Network):
        raise StateError("generator has no decoder")
    latent = dec.in_dim - COND_DIM
    z = np.zeros(latent) if z is None else np.asarray(z, dtype=np.float64)
    if z.shape != (latent,):
        raise ParameterError(f"latent must have shape ({latent},)")
    out = dec(np.concatenate([z, condition_vector(patch, d)]))
    return np.clip(out, 0.0, 1.0)


def generate_panorama(model: CVAE, patch, seed: int | None = None) -> np.ndarray:
    """8 independent generations; ``seed=None`` uses z = 0 for every direction."""
    rng = None if seed is None else np.random.default_rng(seed)
    slices = []
    for d in Direction:
        z = None if rng is None else rng.standard_normal(model.latent_dim)
        slices.append(generate_direction(model, patch, d, z))
    return np.concatenate(slices)


def save_cvae(model: CVAE, path) -> None:
    doc = {
        "format_version": 1,
        "kind": "cvae",
        "latent_dim": model.latent_dim,
        "nets": {"enc": nn_core.network_to_dict(model.enc), "dec": nn_core.network_to_dict(model.dec)},
    }
    Path(path).write_text(json.dumps(doc))


def load_cvae(path) -> CVAE:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "cvae":
        raise ParameterError(f"{path} is not a CVAE checkpoint")
    return CVAE(nn_core.network_from_dict(doc["nets"]["enc"]), nn_core.network_from_dict(doc["nets"]["dec"]), doc["latent_dim"])


class CVAEGenerator:
    """Landmark observations from the decoder, deterministic (z = 0) and cached per patch."""

    def __init__(self, model: CVAE, seed: int | None = None):
        self.model = model
        self.seed = seed
        self._cache: dict[bytes, np.ndarray] = {}

    def landmark_observation(self, cell: Cell, patch) -> np.ndarray:
        key = np.asarray(patch, dtype=np.uint8).tobytes()
        if key not in self._cache:
            self._cache[key] = generate_panorama(self.model, patch, self.seed)
        return self._cache[key]


class OracleGenerator:
    """Ground-truth stand-in: renders the given map at the landmark cell."""

    def __init__(self, grid: OccupancyGrid, depth: int = DEFAULT_DEPTH, palette_seed: int | None = 0):
        self.grid = grid
        self.depth = depth
        self.palette_seed = palette_seed
        self._cache: dict[Cell, np.ndarray] = {}

    def landmark_observation(self, cell: Cell, patch=None) -> np.ndarray:
        cell = Cell(*cell)
        if cell not in self._cache:
            self._cache[cell] = oracle_generator(self.grid, cell, self.depth, self.palette_seed)
        return self._cache[cell]


def oracle_generator(grid: OccupancyGrid, cell: Cell, depth: int = DEFAULT_DEPTH, palette_seed: int | None = 0) -> np.ndarray:
    return render_panorama(grid, cell, depth, palette_seed)
