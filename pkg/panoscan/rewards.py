"""Step-wise exploration rewards, set-level scanpath diversity and the
pairwise task rewards, combined into per-step returns for GAE."""
from __future__ import annotations

import dataclasses
import math
from collections.abc import Collection
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np

from panoscan.diffcore import Array
from panoscan.errors import ArgumentError
from panoscan.features import ViewportBank
from panoscan.image_ops import shannon_entropy
from panoscan.image_ops import ssim
from panoscan.policy import Trajectory
from panoscan.sphere_geom import coverage_fraction

BREAKDOWN_COLUMNS = (
    'ent', 'ssim', 'nov', 'eqb', 'div_cov', 'div_jac', 'mse', 'rank', 'total',
)


@dataclasses.dataclass(frozen=True)
class RewardCoeffs:
    lambda_ent: float = 0.1
    lambda_ssim: float = 0.5
    lambda_nov: float = 0.5
    lambda_eqb: float = 0.3
    gamma_eq: float = 1.5
    beta_cov: float = 1.0
    beta_jac: float = 0.5
    lambda_mse: float = 1.0
    lambda_rank: float = 1.0

    def __post_init__(self) -> None:
        for field in dataclasses.fields(self):
            if getattr(self, field.name) < 0:
                raise ArgumentError(
                    f'{field.name} must be >= 0, got {getattr(self, field.name)}',
                )
        if self.gamma_eq <= 0:
            raise ArgumentError(f'gamma_eq must be > 0, got {self.gamma_eq}')


class StepContext(NamedTuple):
    current: Array  # grayscale rendering of x_t
    previous: Array | None  # rendering of x_{t-1}; None at the first step
    visited: frozenset[int]  # viewports chosen before this step
    index: int
    pitch: float


class StepTerms(NamedTuple):
    """Unweighted step components."""
    ent: float
    ssim: float  # 1 - SSIM(x_{t-1}, x_t), or 0 at the first step
    nov: float
    eqb: float

    def weighted(self, c: RewardCoeffs) -> StepTerms:
        return StepTerms(
            c.lambda_ent * self.ent,
            c.lambda_ssim * self.ssim,
            c.lambda_nov * self.nov,
            c.lambda_eqb * self.eqb,
        )

    def reward(self, c: RewardCoeffs) -> float:
        return sum(self.weighted(c))


def equator_bias(pitch: float, gamma_eq: float) -> float:
    if abs(pitch) > math.pi / 2 + 1e-12:
        raise ArgumentError(f'pitch must be within [-pi/2, pi/2], got {pitch}')
    return math.exp(-gamma_eq * abs(pitch))


def _terms(
        ent: float,
        dissim: float,
        index: int,
        visited: Collection[int],
        pitch: float,
        gamma_eq: float,
) -> StepTerms:
    return StepTerms(
        ent=ent,
        ssim=dissim,
        nov=0.0 if index in visited else 1.0,
        eqb=equator_bias(pitch, gamma_eq),
    )


def step_terms(ctx: StepContext, gamma_eq: float) -> StepTerms:
    dissim = 0.0 if ctx.previous is None else 1.0 - ssim(ctx.previous, ctx.current)
    return _terms(
        shannon_entropy(ctx.current), dissim, ctx.index, ctx.visited, ctx.pitch, gamma_eq,
    )


def step_reward(ctx: StepContext, c: RewardCoeffs) -> float:
    return step_terms(ctx, c.gamma_eq).reward(c)


def bank_step_terms(
        bank: ViewportBank,
        actions: Sequence[int],
        gamma_eq: float,
) -> list[StepTerms]:
    """Step components along a scanpath from the cached renderings."""
    if bank.entropy is None:
        raise ArgumentError('step rewards need a bank with renderings')
    ret = []
    for i, action in enumerate(actions):
        dissim = 0.0 if i == 0 else 1.0 - bank.ssim(actions[i - 1], action)
        ret.append(_terms(
            float(bank.entropy[action]), dissim, action, actions[:i],
            float(bank.pitches[action]), gamma_eq,
        ))
    return ret


class DiversityTerms(NamedTuple):
    coverage: float  # |union| / X
    jaccard: float  # mean pairwise Jaccard similarity over ordered pairs

    def reward(self, beta_cov: float, beta_jac: float) -> float:
        return beta_cov * self.coverage - beta_jac * self.jaccard


def diversity_terms(paths: Sequence[Collection[int]], x: int) -> DiversityTerms:
    sets = [frozenset(p) for p in paths]
    if not sets or any(not s for s in sets):
        raise ArgumentError('diversity needs at least one non-empty scanpath')
    coverage = coverage_fraction(frozenset().union(*sets), x)
    k = len(sets)
    if k < 2:
        return DiversityTerms(coverage, 0.0)
    total = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                total += len(sets[i] & sets[j]) / len(sets[i] | sets[j])
    return DiversityTerms(coverage, total / (k * (k - 1)))


def diversity_reward(
        paths: Sequence[Collection[int]],
        x: int,
        beta_cov: float,
        beta_jac: float,
) -> float:
    return diversity_terms(paths, x).reward(beta_cov, beta_jac)


def mse_reward(q1_hat: float, q2_hat: float, q1: float, q2: float) -> float:
    return -((q1_hat - q1) ** 2 + (q2_hat - q2) ** 2)


def rank_sign(q1: float, q2: float) -> float:
    return float(np.sign(q1 - q2))


def rank_reward(q1_hat: float, q2_hat: float, q1: float, q2: float) -> float:
    """``-log(1 + exp(-s (q1_hat - q2_hat)))``; tied labels give ``-log 2``."""
    s = rank_sign(q1, q2)
    return -float(np.logaddexp(0.0, -s * (q1_hat - q2_hat)))


def total_reward(
        step_sums: Sequence[float],
        r_div: float,
        r_mse: float,
        r_rank: float,
        lambda_mse: float,
        lambda_rank: float,
) -> float:
    """Mean step return over the K paths plus the episodic terms."""
    if not step_sums:
        raise ArgumentError('total reward needs at least one scanpath')
    return (
        sum(step_sums) / len(step_sums)
        + r_div
        + lambda_mse * r_mse
        + lambda_rank * r_rank
    )


def assign_step_rewards(
        traj: Trajectory,
        step_rewards: Sequence[float],
        episodic: float,
) -> Trajectory:
    """Writes per-step rewards; the episodic share lands on the last step.

    Every trajectory of an image receives the full episodic term, so the mean
    return over the K trajectories equals the total reward.
    """
    if len(step_rewards) != len(traj):
        raise ArgumentError(
            f'{len(step_rewards)} rewards for a trajectory of {len(traj)} steps',
        )
    traj.rewards = [float(r) for r in step_rewards]
    traj.rewards[-1] += episodic
    traj.dones = [i == len(traj) - 1 for i in range(len(traj))]
    return traj


@dataclasses.dataclass
class RewardBreakdown:
    """One image's reward stack, weighted, for the per-episode CSV."""
    ent: float = 0.0
    ssim: float = 0.0
    nov: float = 0.0
    eqb: float = 0.0
    div_cov: float = 0.0
    div_jac: float = 0.0
    mse: float = 0.0
    rank: float = 0.0

    @property
    def total(self) -> float:
        return sum(getattr(self, name) for name in BREAKDOWN_COLUMNS[:-1])

    def row(self) -> dict[str, float]:
        ret = {name: getattr(self, name) for name in BREAKDOWN_COLUMNS[:-1]}
        ret['total'] = self.total
        return ret


def mean_breakdown(items: Sequence[RewardBreakdown]) -> RewardBreakdown:
    if not items:
        return RewardBreakdown()
    return RewardBreakdown(**{
        name: float(np.mean([getattr(b, name) for b in items]))
        for name in BREAKDOWN_COLUMNS[:-1]
    })
