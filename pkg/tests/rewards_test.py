import math

import numpy as np
import pytest

from panoscan import rewards
from panoscan.errors import ArgumentError
from panoscan.features import build_bank
from panoscan.image_ops import shannon_entropy
from panoscan.image_ops import ssim
from panoscan.policy import Trajectory
from panoscan.rewards import RewardBreakdown
from panoscan.rewards import RewardCoeffs
from panoscan.rewards import StepContext
from panoscan.rewards import StepTerms
from panoscan.sphere_geom import build_grid
from panoscan.synth_data import gen_panorama


@pytest.mark.parametrize(
    ('pitch', 'gamma', 'expected'),
    (
        (0.0, 1.5, 1.0),
        (math.pi / 2, 1.5, math.exp(-1.5 * math.pi / 2)),
        (-math.pi / 4, 2.0, math.exp(-math.pi / 2)),
    ),
)
def test_equator_bias(pitch, gamma, expected):
    assert rewards.equator_bias(pitch, gamma) == pytest.approx(expected)


def test_equator_bias_rejects_pitch():
    with pytest.raises(ArgumentError):
        rewards.equator_bias(2.0, 1.5)


def test_equator_bias_is_symmetric_and_peaks_at_equator():
    pitches = np.linspace(0.0, math.pi / 2, 7)
    values = [rewards.equator_bias(p, 1.5) for p in pitches]
    assert values == sorted(values, reverse=True)
    assert rewards.equator_bias(0.4, 1.5) == rewards.equator_bias(-0.4, 1.5)


def test_step_terms_first_step():
    img = np.random.default_rng(0).uniform(size=(16, 16))
    terms = rewards.step_terms(StepContext(img, None, frozenset(), 3, 0.0), 1.5)
    assert terms.ssim == 0.0
    assert terms.nov == 1.0
    assert terms.eqb == 1.0
    assert terms.ent == shannon_entropy(img)


def test_step_terms_revisit_and_repeat():
    img = np.random.default_rng(0).uniform(size=(16, 16))
    terms = rewards.step_terms(StepContext(img, img, frozenset({3}), 3, 0.0), 1.5)
    assert terms.nov == 0.0
    assert terms.ssim == pytest.approx(0.0, abs=1e-12)


def test_step_terms_flat_view_has_no_entropy():
    flat = np.full((16, 16), 0.5)
    assert rewards.step_terms(StepContext(flat, None, frozenset(), 0, 0.0), 1.5).ent == 0.0


def test_step_reward_weights():
    img = np.random.default_rng(1).uniform(size=(16, 16))
    prev = np.random.default_rng(2).uniform(size=(16, 16))
    ctx = StepContext(img, prev, frozenset(), 0, 0.3)
    c = RewardCoeffs(lambda_ent=0.1, lambda_ssim=0.5, lambda_nov=0.5, lambda_eqb=0.3)
    expected = (
        0.1 * shannon_entropy(img)
        + 0.5 * (1 - ssim(prev, img))
        + 0.5
        + 0.3 * math.exp(-1.5 * 0.3)
    )
    assert rewards.step_reward(ctx, c) == pytest.approx(expected)


def test_bank_step_terms_match_contexts():
    grid = build_grid(4, 2, 90.0)
    bank = build_bank(gen_panorama(3, 64, 32), grid, 16, 8)
    actions = [2, 5, 2, 7]
    terms = rewards.bank_step_terms(bank, actions, 1.5)
    for i, action in enumerate(actions):
        ctx = StepContext(
            bank.gray[action],
            None if i == 0 else bank.gray[actions[i - 1]],
            frozenset(actions[:i]),
            action,
            grid[action].pitch,
        )
        expected = rewards.step_terms(ctx, 1.5)
        np.testing.assert_allclose(terms[i], expected, atol=1e-12)
    assert [t.nov for t in terms] == [1.0, 1.0, 0.0, 1.0]


@pytest.mark.parametrize(
    ('paths', 'x', 'coverage', 'jaccard'),
    (
        ([{0, 1}, {1, 2}], 4, 0.75, 1 / 3),
        ([{0, 1}, {0, 1}], 4, 0.5, 1.0),
        ([{0}, {1}, {2}], 3, 1.0, 0.0),
        ([[0, 1, 1]], 8, 0.25, 0.0),
    ),
)
def test_diversity_terms(paths, x, coverage, jaccard):
    terms = rewards.diversity_terms(paths, x)
    assert terms.coverage == pytest.approx(coverage)
    assert terms.jaccard == pytest.approx(jaccard)


def test_diversity_reward():
    assert rewards.diversity_reward([{0, 1}, {1, 2}], 4, 1.0, 0.5) == pytest.approx(0.75 - 1 / 6)


@pytest.mark.parametrize('paths', ([], [{0}, set()], [{0, 4}, {1}]))
def test_diversity_rejects(paths):
    with pytest.raises(ArgumentError):
        rewards.diversity_terms(paths, 4)


def test_mse_reward():
    assert rewards.mse_reward(50.0, 60.0, 40.0, 70.0) == -200.0
    assert rewards.mse_reward(1.0, 2.0, 1.0, 2.0) == 0.0


@pytest.mark.parametrize(
    ('q1_hat', 'q2_hat', 'q1', 'q2', 'expected'),
    (
        (3.0, 3.0, 5.0, 5.0, -math.log(2)),
        (0.0, 0.0, 5.0, 1.0, -math.log(2)),
        (2.0, 0.0, 5.0, 1.0, -math.log1p(math.exp(-2.0))),
        (0.0, 2.0, 5.0, 1.0, -math.log1p(math.exp(2.0))),
    ),
)
def test_rank_reward(q1_hat, q2_hat, q1, q2, expected):
    assert rewards.rank_reward(q1_hat, q2_hat, q1, q2) == pytest.approx(expected)


def test_rank_reward_prefers_correct_order():
    assert rewards.rank_reward(9.0, 1.0, 80.0, 20.0) > rewards.rank_reward(1.0, 9.0, 80.0, 20.0)
    assert rewards.rank_reward(1000.0, 0.0, 80.0, 20.0) == pytest.approx(0.0, abs=1e-12)


def test_total_reward():
    got = rewards.total_reward([1.0, 3.0], 0.5, -2.0, -0.7, 0.5, 2.0)
    assert got == pytest.approx(2.0 + 0.5 - 1.0 - 1.4)


def test_total_reward_rejects_empty():
    with pytest.raises(ArgumentError):
        rewards.total_reward([], 0.0, 0.0, 0.0, 1.0, 1.0)


def _traj(n):
    traj = Trajectory()
    traj.actions = list(range(n))
    return traj


def test_assign_step_rewards():
    traj = rewards.assign_step_rewards(_traj(3), [1.0, 2.0, 3.0], 10.0)
    assert traj.rewards == [1.0, 2.0, 13.0]
    assert traj.dones == [False, False, True]


def test_assign_step_rewards_length_mismatch():
    with pytest.raises(ArgumentError):
        rewards.assign_step_rewards(_traj(3), [1.0, 2.0], 0.0)


def test_mean_return_equals_total_reward():
    steps = [[0.5, 0.25], [1.0, 2.0], [0.0, 0.75]]
    episodic = 0.4 + 0.5 * -1.5 + 1.0 * -0.3
    trajs = [rewards.assign_step_rewards(_traj(2), s, episodic) for s in steps]
    mean_return = np.mean([sum(t.rewards) for t in trajs])
    expected = rewards.total_reward([sum(s) for s in steps], 0.4, -1.5, -0.3, 0.5, 1.0)
    assert mean_return == pytest.approx(expected)


@pytest.mark.parametrize(
    'kwargs',
    ({'lambda_ent': -0.1}, {'beta_jac': -1.0}, {'gamma_eq': 0.0}),
)
def test_reward_coeffs_rejects(kwargs):
    with pytest.raises(ArgumentError):
        RewardCoeffs(**kwargs)


def test_step_terms_weighted():
    c = RewardCoeffs(lambda_ent=2.0, lambda_ssim=0.0, lambda_nov=1.0, lambda_eqb=0.5)
    terms = StepTerms(1.0, 0.5, 1.0, 0.8)
    assert terms.weighted(c) == StepTerms(2.0, 0.0, 1.0, 0.4)
    assert terms.reward(c) == pytest.approx(3.4)


def test_breakdown_total_and_row():
    b = RewardBreakdown(ent=1.0, nov=0.5, div_jac=-0.25, rank=-0.5)
    assert b.total == pytest.approx(0.75)
    row = b.row()
    assert list(row) == list(rewards.BREAKDOWN_COLUMNS)
    assert row['total'] == pytest.approx(0.75)


def test_mean_breakdown():
    mean = rewards.mean_breakdown([RewardBreakdown(ent=1.0), RewardBreakdown(ent=3.0, mse=-2.0)])
    assert mean.ent == 2.0
    assert mean.mse == -1.0
    assert rewards.mean_breakdown([]) == RewardBreakdown()
