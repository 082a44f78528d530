"""Assessor objective on the 0-100 score scale.

Each loss exists twice: a float function for evaluation and logging, and a
``tape_*`` twin that records the same expression for backpropagation.
"""
from __future__ import annotations

import dataclasses
from typing import NamedTuple

import numpy as np

from panoscan.diffcore import Tape
from panoscan.diffcore import Tensor
from panoscan.errors import ArgumentError


@dataclasses.dataclass(frozen=True)
class LossWeights:
    beta_mse: float = 1.0
    beta_rank: float = 0.5
    beta_cons: float = 0.2
    beta_triplet: float = 0.2
    beta_cross: float = 0.3
    margin1: float = 2.0
    margin2: float = 2.0
    margin3: float = 4.0

    def __post_init__(self) -> None:
        for field in dataclasses.fields(self):
            if getattr(self, field.name) < 0:
                raise ArgumentError(
                    f'{field.name} must be >= 0, got {getattr(self, field.name)}',
                )


class LossComponents(NamedTuple):
    mse: float = 0.0
    rank: float = 0.0
    cons: float = 0.0
    triplet: float = 0.0
    cross: float = 0.0


def l_mse(q1_hat: float, q2_hat: float, q1: float, q2: float) -> float:
    return (q1_hat - q1) ** 2 + (q2_hat - q2) ** 2


def l_rank(q1_hat: float, q2_hat: float, s: float) -> float:
    """``log(1 + exp(-s (q1_hat - q2_hat)))``."""
    if s not in (-1.0, 0.0, 1.0):
        raise ArgumentError(f'rank sign must be -1, 0 or 1, got {s}')
    return float(np.logaddexp(0.0, -s * (q1_hat - q2_hat)))


def l_cons(q_clean: float, q_weak: float) -> float:
    return (q_clean - q_weak) ** 2


def l_triplet(
        q_clean: float,
        q_mild: float,
        q_strong: float,
        m1: float,
        m2: float,
        m3: float,
) -> float:
    if min(m1, m2, m3) < 0:
        raise ArgumentError('triplet margins must be >= 0')
    return (
        max(0.0, q_mild - q_clean + m1)
        + max(0.0, q_strong - q_mild + m2)
        + max(0.0, q_strong - q_clean + m3)
    )


def l_cross(qa_aug: float, qb_aug: float, s: float) -> float:
    return l_rank(qa_aug, qb_aug, s)


def l_total(c: LossComponents, w: LossWeights) -> float:
    return (
        w.beta_mse * c.mse
        + w.beta_rank * c.rank
        + w.beta_cons * c.cons
        + w.beta_triplet * c.triplet
        + w.beta_cross * c.cross
    )


# recorded versions


def tape_mse(tape: Tape, q1_hat: Tensor, q2_hat: Tensor, q1: float, q2: float) -> Tensor:
    return tape.add(
        tape.square(tape.sub(q1_hat, q1)), tape.square(tape.sub(q2_hat, q2)),
    )


def tape_rank(tape: Tape, q1_hat: Tensor, q2_hat: Tensor, s: float) -> Tensor:
    # tied labels give the constant log 2 and no gradient
    return tape.softplus(tape.scale(tape.sub(q1_hat, q2_hat), -s))


def tape_cons(tape: Tape, q_clean: Tensor, q_weak: Tensor) -> Tensor:
    return tape.square(tape.sub(q_clean, q_weak))


def tape_triplet(
        tape: Tape,
        q_clean: Tensor,
        q_mild: Tensor,
        q_strong: Tensor,
        w: LossWeights,
) -> Tensor:
    def hinge(hi: Tensor, lo: Tensor, margin: float) -> Tensor:
        return tape.relu(tape.add(tape.sub(hi, lo), margin))
    return tape.add(
        tape.add(hinge(q_mild, q_clean, w.margin1), hinge(q_strong, q_mild, w.margin2)),
        hinge(q_strong, q_clean, w.margin3),
    )


def tape_cross(tape: Tape, qa_aug: Tensor, qb_aug: Tensor, s: float) -> Tensor:
    return tape_rank(tape, qa_aug, qb_aug, s)


class TapeComponents(NamedTuple):
    mse: Tensor | None = None
    rank: Tensor | None = None
    cons: Tensor | None = None
    triplet: Tensor | None = None
    cross: Tensor | None = None


def tape_total(tape: Tape, c: TapeComponents, w: LossWeights) -> Tensor:
    """Weighted sum; components that are absent or weighted 0 are left out
    of the graph entirely."""
    weights = (w.beta_mse, w.beta_rank, w.beta_cons, w.beta_triplet, w.beta_cross)
    total: Tensor | None = None
    for beta, comp in zip(weights, c):
        if comp is None or beta == 0:
            continue
        term = tape.scale(comp, beta)
        total = term if total is None else tape.add(total, term)
    return tape.const(0.0) if total is None else total
