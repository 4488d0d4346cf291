"""Counterfactual search by masked, direction-constrained gradient descent in input space."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from cadex.data import Dataset, Schema, check_valid, decode, format_value
from cadex.nnet import AdamState, Network, adam_step, grad_input, predict

CHANGE_TOL = 1e-9


class AlreadyTarget(ValueError):
    """The input is already classified as the requested target."""


class NoDescentDirection(ValueError):
    """Every gradient column was masked out, so the search cannot move."""


@dataclass(frozen=True)
class SearchConfig:
    target: int
    direction: np.ndarray
    n_change: int = 5
    n_skip: int = 0
    t_flip: float = 0.2
    max_epochs: int = 1000
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        if self.target not in (0, 1):
            raise ValueError("target must be 0 or 1")
        if self.n_change < 1 or self.n_skip < 0:
            raise ValueError("n_change must be >= 1 and n_skip >= 0")
        if self.n_skip + self.n_change > len(self.direction):
            raise ValueError("n_skip + n_change exceeds the encoded width")
        if not 0 < self.t_flip < 1:
            raise ValueError("t_flip must lie in (0, 1)")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class Explanation:
    counterfactual: np.ndarray
    changed_columns: tuple[int, ...]
    epochs_used: int
    l2_distance: float
    n_skip: int = 0
    decoded_diff: list[tuple[str, str, str]] = field(default_factory=list)


def directional_mask(gradient: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """1 where a descent step respects the direction code, 0 where it would violate it.

    Descent subtracts the gradient, so a column that may only increase
    (code > 0) is blocked when its gradient is positive, and vice versa.
    """
    gradient = np.asarray(gradient, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if gradient.shape != direction.shape:
        raise ValueError("gradient and direction widths differ")
    blocked = ((direction > 0) & (gradient > 0)) | ((direction < 0) & (gradient < 0))
    return (~blocked).astype(float)


def selection_mask(gradient: np.ndarray, direction: np.ndarray, n_change: int, n_skip: int) -> np.ndarray:
    gradient = np.asarray(gradient, dtype=float)
    if n_skip + n_change > len(gradient):
        raise ValueError("n_skip + n_change exceeds the encoded width")
    allowed = directional_mask(gradient, direction) * gradient
    candidates = np.flatnonzero(allowed)
    if len(candidates) == 0:
        raise NoDescentDirection("no column has an allowed nonzero gradient")
    # stable sort on -|g| keeps ascending column order among ties
    ranked = candidates[np.argsort(-np.abs(allowed[candidates]), kind="stable")]
    if n_skip >= len(ranked):
        raise NoDescentDirection(f"only {len(ranked)} columns can move; cannot skip {n_skip}")
    mask = np.zeros(len(gradient))
    mask[ranked[n_skip:n_skip + n_change]] = 1.0
    return mask


def flip_categorical(x: np.ndarray, schema: Schema, t_flip: float) -> np.ndarray:
    """Switch a one-hot block to its runner-up category once that value exceeds ``t_flip``."""
    out = np.array(x, dtype=float)
    for block in schema.categorical_blocks:
        values = out[block]
        order = np.argsort(-values, kind="stable")
        runner_up = order[1]
        if values[runner_up] > t_flip:
            values[:] = 0.0
            values[runner_up] = 1.0
    return out


def round_half_away(values: np.ndarray) -> np.ndarray:
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def apply_constraints(x: np.ndarray, schema: Schema) -> np.ndarray:
    """Project onto valid samples: argmax one-hot per block, rounded ordinals."""
    out = np.array(x, dtype=float)
    for block in schema.categorical_blocks:
        winner = int(np.argmax(out[block]))
        out[block] = 0.0
        out[block.start + winner] = 1.0
    cols = schema.ordinal_columns
    out[cols] = round_half_away(out[cols])
    return out


def diff_table(original: np.ndarray, counterfactual: np.ndarray, dataset: Dataset) -> list[tuple[str, str, str]]:
    """(attribute, original display value, new display value) for each changed attribute."""
    before, after = decode(original, dataset), decode(counterfactual, dataset)
    rows = []
    for attr in dataset.schema.attributes:
        if before[attr.name] != after[attr.name]:
            rows.append((attr.name, format_value(attr, before[attr.name]),
                         format_value(attr, after[attr.name])))
    return rows


def find_counterfactual(net: Network, x: np.ndarray, schema: Schema, config: SearchConfig,
                        dataset: Dataset | None = None) -> Explanation | None:
    """Search for a valid sample near ``x`` that ``net`` assigns to ``config.target``.

    The columns allowed to move are fixed from the first gradient; each epoch
    the masked gradient (with directional re-masking) is fed to Adam, one-hot
    blocks are flipped past ``t_flip``, and the projected sample is tested.
    Returns None when ``max_epochs`` run out. ``dataset`` is only used to
    decode a human-readable diff.
    """
    x = np.asarray(x, dtype=float)
    check_valid(x, schema)
    if len(config.direction) != len(x):
        raise ValueError("direction width does not match the sample")
    if predict(net, x) == config.target:
        raise AlreadyTarget(f"input already classified as class {config.target}")

    grad0 = grad_input(net, x, config.target)
    mask = selection_mask(grad0, config.direction, config.n_change, config.n_skip)
    state = AdamState.zeros(x.shape, lr=config.lr, beta1=config.beta1,
                            beta2=config.beta2, eps=config.eps)
    current = x.copy()
    for epoch in range(config.max_epochs):
        g = grad_input(net, current, config.target) * mask
        g *= directional_mask(g, config.direction)
        current = adam_step(state, current, g)
        current = flip_categorical(current, schema, config.t_flip)
        adjusted = apply_constraints(current, schema)
        if predict(net, adjusted) == config.target:
            changed = tuple(int(i) for i in np.flatnonzero(np.abs(adjusted - x) > CHANGE_TOL))
            return Explanation(
                counterfactual=adjusted,
                changed_columns=changed,
                epochs_used=epoch + 1,
                l2_distance=float(np.linalg.norm(adjusted - x)),
                n_skip=config.n_skip,
                decoded_diff=diff_table(x, adjusted, dataset) if dataset is not None else [],
            )
    return None


def find_alternatives(net: Network, x: np.ndarray, schema: Schema, base_config: SearchConfig,
                      n_alternatives: int, dataset: Dataset | None = None) -> list[Explanation]:
    """Run the search for n_skip = 0 .. n_alternatives-1 and keep the successes in order."""
    if n_alternatives < 1:
        raise ValueError("n_alternatives must be >= 1")
    found = []
    for n_skip in range(n_alternatives):
        if n_skip + base_config.n_change > len(x):
            break
        try:
            result = find_counterfactual(net, x, schema, replace(base_config, n_skip=n_skip), dataset)
        except NoDescentDirection:
            continue
        if result is not None:
            found.append(result)
    return found
