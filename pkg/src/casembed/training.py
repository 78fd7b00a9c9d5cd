"""Batch gradient descent over combination tables.

Each epoch measures loss and the active set against the current coordinates,
accumulates the hinge gradients of every active combination, then moves each
touched coordinate once by the learning rate times the average of the
gradients that touched it. Loss and active count describe the state before
the update, so the first epoch's numbers characterize the random init.
Merged combinations enter once per epoch regardless of occurrence count.

Gradient accumulation runs in a fixed order over the table, so results do
not depend on any worker or thread count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from casembed.combinations import MODES, Combination, CombinationTable, build_table
from casembed.data import CascadeDataset
from casembed.model import VARIANTS, EmbeddingModel, ModelError, init_model

__all__ = [
    "TrainConfig",
    "EpochStats",
    "predicted_gap",
    "hinge_loss",
    "accumulate_gradients",
    "run_epoch",
    "train",
    "work_meter",
]

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults follow the best-performing
    settings (dimension 75, learning rate 0.01, margin log base 2)."""

    epochs: int
    dimension: int = 75
    learning_rate: float = 0.01
    mu: float = 2.0
    kernel_time: float = 1.0
    sampling: str = "dominant"
    variant: str = "independent"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.dimension < 1:
            raise ValueError(f"dimension must be at least 1, got {self.dimension}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.mu <= 1:
            raise ValueError(f"mu must exceed 1, got {self.mu}")
        if self.kernel_time <= 0:
            raise ValueError(f"kernel_time must be positive, got {self.kernel_time}")
        if self.sampling not in MODES:
            raise ValueError(f"sampling must be one of {MODES}, got {self.sampling!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    total_loss: float
    active_count: int


class _WorkMeter:
    """Counts combination-coordinate operations, for complexity checks."""

    def __init__(self):
        self.entry_dims = 0

    def reset(self):
        self.entry_dims = 0


work_meter = _WorkMeter()


def predicted_gap(model: EmbeddingModel, source: int, earlier: int, later: int) -> float:
    """Distance-squared gap d2(source, later) - d2(source, earlier)."""
    d_earlier = model.distance_sq(source, earlier)
    d_later = model.distance_sq(source, later)
    if d_earlier is None or d_later is None:
        raise ModelError(
            f"combination ({source}, {earlier}, {later}) has unallocated coordinates"
        )
    return d_later - d_earlier


def hinge_loss(avg_margin: float, gap: float) -> float:
    """max(0, margin - gap): zero exactly when the gap clears the margin."""
    return max(0.0, avg_margin - gap)


def accumulate_gradients(model: EmbeddingModel, combo: Combination):
    """Gradient triple (g_x, g_earlier, g_later) of an active combination.

    Returns None when the combination is inactive (gap >= margin). Active
    gradients are g_x = 2(y_j - y_i), g_yi = 2(y_i - x), g_yj = 2(x - y_j),
    the descent directions of the hinge term.
    """
    gap = predicted_gap(model, combo.source, combo.earlier, combo.later)
    if gap >= combo.avg_margin:
        return None
    x = model.influence_point(combo.source)
    y_i = model.susceptibility_point(combo.source, combo.earlier)
    y_j = model.susceptibility_point(combo.source, combo.later)
    return 2.0 * (y_j - y_i), 2.0 * (y_i - x), 2.0 * (x - y_j)


@dataclass(frozen=True)
class _PackedTable:
    """Combination table resolved to coordinate rows of one model."""

    x_rows: np.ndarray
    early_rows: np.ndarray
    late_rows: np.ndarray
    margins: np.ndarray


def _pack_table(model: EmbeddingModel, table: CombinationTable) -> _PackedTable:
    x_rows, early_rows, late_rows, margins = [], [], [], []
    influence = model._influence
    for combo in table:
        row_x = influence.get(combo.source)
        space = model.space_of(combo.source)
        row_i = space.get(combo.earlier) if space is not None else None
        row_j = space.get(combo.later) if space is not None else None
        if row_x is None or row_i is None or row_j is None:
            raise ModelError(
                f"combination {combo.key} has unallocated coordinates"
            )
        x_rows.append(row_x)
        early_rows.append(row_i)
        late_rows.append(row_j)
        margins.append(combo.avg_margin)
    return _PackedTable(
        np.asarray(x_rows, dtype=np.int64),
        np.asarray(early_rows, dtype=np.int64),
        np.asarray(late_rows, dtype=np.int64),
        np.asarray(margins, dtype=np.float64),
    )


def _run_packed_epoch(
    model: EmbeddingModel, packed: _PackedTable, learning_rate: float, epoch: int
) -> EpochStats:
    coords = model.coords
    x = coords[packed.x_rows]
    diff_i = x - coords[packed.early_rows]
    diff_j = x - coords[packed.late_rows]
    gaps = np.einsum("ij,ij->i", diff_j, diff_j) - np.einsum("ij,ij->i", diff_i, diff_i)
    active = gaps < packed.margins
    total_loss = float(np.sum(packed.margins[active] - gaps[active]))
    active_count = int(np.count_nonzero(active))
    work_meter.entry_dims += packed.margins.size * model.dimension

    if active_count:
        rows_x = packed.x_rows[active]
        rows_i = packed.early_rows[active]
        rows_j = packed.late_rows[active]
        g_x = 2.0 * (diff_i[active] - diff_j[active])  # = 2 (y_j - y_i)
        g_i = -2.0 * diff_i[active]
        g_j = 2.0 * diff_j[active]
        accum = np.zeros_like(coords)
        touched = np.zeros(len(coords), dtype=np.int64)
        np.add.at(accum, rows_x, g_x)
        np.add.at(accum, rows_i, g_i)
        np.add.at(accum, rows_j, g_j)
        np.add.at(touched, rows_x, 1)
        np.add.at(touched, rows_i, 1)
        np.add.at(touched, rows_j, 1)
        mask = touched > 0
        coords[mask] -= learning_rate * accum[mask] / touched[mask, None]
    return EpochStats(epoch, total_loss, active_count)


def run_epoch(
    model: EmbeddingModel,
    table: CombinationTable,
    learning_rate: float,
    epoch: int = 0,
) -> EpochStats:
    """One batch update in place; the stats describe the pre-update state."""
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    return _run_packed_epoch(model, _pack_table(model, table), learning_rate, epoch)


def train(
    train_set: CascadeDataset, config: TrainConfig
) -> tuple[EmbeddingModel, list[EpochStats]]:
    """Fit latent coordinates to a training corpus.

    Builds the combination table per config.sampling, initializes the model
    from config.seed, and descends for up to config.epochs epochs, stopping
    early once no combination is active (further epochs would be no-ops).
    Deterministic for a fixed config.
    """
    table = build_table(train_set, mu=config.mu, mode=config.sampling)
    rng = np.random.default_rng(config.seed)
    model = init_model(table, config, rng)
    history: list[EpochStats] = []
    if len(table) == 0:
        logger.warning("no training combinations extracted; model left at its init")
        return model, history
    packed = _pack_table(model, table)
    for epoch in range(config.epochs):
        stats = _run_packed_epoch(model, packed, config.learning_rate, epoch)
        history.append(stats)
        if stats.active_count == 0:
            break
    return model, history
