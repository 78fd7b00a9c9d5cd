"""Planted latent worlds: synthetic corpora whose ideal orderings are known.

A world fixes ground-truth geometry (an independent-variant model) and emits
cascades whose members are drawn uniformly from a source's pool and ordered
by their true distance, optionally perturbed by one adjacent-swap noise pass.
Training on noiseless emissions should therefore recover a geometry that
satisfies every extracted ordering constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from casembed.data import CascadeDataset
from casembed.model import EmbeddingModel

__all__ = ["PlantedWorld", "generate_world", "emit_cascades"]

_TIE_GAP = 1e-9


@dataclass(frozen=True)
class PlantedWorld:
    """Ground-truth geometry used to emit cascades.

    `noise` is the probability, per adjacent pair, of one swap during
    emission; at zero every emitted cascade follows the ground-truth
    distance order exactly.
    """

    ground_truth: EmbeddingModel
    sources: tuple[int, ...]
    users_per_source: int
    noise: float


def generate_world(
    num_sources: int,
    users_per_source: int,
    dimension: int,
    seed: int,
    noise: float = 0.0,
) -> PlantedWorld:
    """Sample an independent-variant ground truth with distinct distances.

    Sources get ids 0..num_sources-1 (tokens "s<i>"); each source owns a
    disjoint pool of users (tokens "u<k>"). Coordinates are uniform in
    [-1, 1]^D; a user is resampled while its squared distance to its source
    is within 1e-9 of another pool member's, so distance orderings are
    strict. Deterministic per seed.
    """
    if num_sources < 1 or users_per_source < 1:
        raise ValueError("num_sources and users_per_source must be at least 1")
    if dimension < 1:
        raise ValueError(f"dimension must be at least 1, got {dimension}")
    if not 0.0 <= noise <= 1.0:
        raise ValueError(f"noise must be in [0, 1], got {noise}")
    rng = np.random.default_rng(seed)
    tokens = [f"s{i}" for i in range(num_sources)]
    tokens += [f"u{k}" for k in range(num_sources * users_per_source)]
    coords: list[np.ndarray] = []
    influence: dict[int, int] = {}
    spaces: dict[int, dict[int, int]] = {}
    for i in range(num_sources):
        x = rng.uniform(-1.0, 1.0, dimension)
        influence[i] = len(coords)
        coords.append(x)
        space: dict[int, int] = {}
        taken: list[float] = []
        for j in range(users_per_source):
            user = num_sources + i * users_per_source + j
            while True:
                y = rng.uniform(-1.0, 1.0, dimension)
                d2 = float((x - y) @ (x - y))
                if all(abs(d2 - other) >= _TIE_GAP for other in taken):
                    break
            taken.append(d2)
            space[user] = len(coords)
            coords.append(y)
        spaces[i] = space
    model = EmbeddingModel(
        dimension,
        "independent",
        np.array(coords),
        influence,
        spaces=spaces,
        tokens=tuple(tokens),
    )
    return PlantedWorld(model, tuple(range(num_sources)), users_per_source, noise)


def emit_cascades(
    world: PlantedWorld, per_source: int, cascade_len: int, seed: int
) -> CascadeDataset:
    """Emit per_source cascades per source.

    Each cascade draws cascade_len users uniformly without replacement from
    the source's pool, orders them by ascending ground-truth distance, then
    runs one left-to-right pass swapping each adjacent pair independently
    with probability world.noise. The swap randoms are drawn regardless of
    the noise level, so cascade membership is seed-stable across noise
    settings. Deterministic per seed.
    """
    if per_source < 1:
        raise ValueError(f"per_source must be at least 1, got {per_source}")
    if cascade_len < 1:
        raise ValueError(f"cascade_len must be at least 1, got {cascade_len}")
    if cascade_len > world.users_per_source:
        raise ValueError(
            f"cascade_len {cascade_len} exceeds the per-source pool"
            f" of {world.users_per_source}"
        )
    model = world.ground_truth
    rng = np.random.default_rng(seed)
    rows: list[tuple[str, list[str]]] = []
    for source in world.sources:
        pool = sorted(model.space_of(source))
        dist = {u: model.distance_sq(source, u) for u in pool}
        for k in range(per_source):
            members = [int(u) for u in rng.choice(pool, size=cascade_len, replace=False)]
            members.sort(key=dist.__getitem__)
            for p in range(len(members) - 1):
                if rng.random() < world.noise:
                    members[p], members[p + 1] = members[p + 1], members[p]
            rows.append(
                (
                    f"{model.token(source)}-c{k}",
                    [model.token(source)] + [model.token(u) for u in members],
                )
            )
    return CascadeDataset.from_token_rows(rows)
