"""PPO for the scanpath policy, trained jointly with the quality assessor.

Each training batch:

1. rolls out K scanpaths per image with the current policy (forward only,
   parallel across images),
2. scores the images with the assessor and fills per-step rewards,
3. runs ``update_epochs`` clipped-surrogate updates on the batch,
4. takes one assessor step on its loss stack over the same scanpaths.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import math
import os.path
from collections.abc import Callable
from collections.abc import Sequence
from typing import NamedTuple
from typing import TypeVar

import numpy as np

from panoscan import checkpoint
from panoscan import config as config_mod
from panoscan.assessor import init_assessor_params
from panoscan.assessor import predict_image
from panoscan.assessor import score_image
from panoscan.config import RunConfig
from panoscan.console import CsvLog
from panoscan.console import status
from panoscan.diffcore import adam_step
from panoscan.diffcore import Array
from panoscan.diffcore import backward
from panoscan.diffcore import clip_global_norm
from panoscan.diffcore import ParameterSet
from panoscan.diffcore import Tape
from panoscan.diffcore import Tensor
from panoscan.distortions import augment
from panoscan.distortions import Severity
from panoscan.errors import ArgumentError
from panoscan.errors import ContractViolationError
from panoscan.errors import NumericalAbortError
from panoscan.errors import UndefinedCorrelationError
from panoscan.features import BankCache
from panoscan.features import build_bank
from panoscan.features import build_feature_bank
from panoscan.features import ViewportBank
from panoscan.losses import tape_cons
from panoscan.losses import tape_cross
from panoscan.losses import tape_mse
from panoscan.losses import tape_rank
from panoscan.losses import tape_total
from panoscan.losses import tape_triplet
from panoscan.losses import TapeComponents
from panoscan.metrics import EvalReport
from panoscan.policy import evaluate_actions
from panoscan.policy import image_terms
from panoscan.policy import init_policy_params
from panoscan.policy import rollout
from panoscan.policy import Trajectory
from panoscan.rewards import assign_step_rewards
from panoscan.rewards import bank_step_terms
from panoscan.rewards import BREAKDOWN_COLUMNS
from panoscan.rewards import diversity_terms
from panoscan.rewards import mean_breakdown
from panoscan.rewards import mse_reward
from panoscan.rewards import rank_reward
from panoscan.rewards import rank_sign
from panoscan.rewards import RewardBreakdown
from panoscan.rewards import total_reward
from panoscan.sphere_geom import build_grid
from panoscan.sphere_geom import ViewportGrid
from panoscan.synth_data import LabeledSample

CHECKPOINT_NAME = 'checkpoint.npz'
METRICS_NAME = 'metrics.csv'
REWARDS_NAME = 'rewards.csv'
LOSS_COLUMNS = (
    'loss_mse', 'loss_rank', 'loss_cons', 'loss_triplet', 'loss_cross', 'loss_total',
)
METRIC_COLUMNS = (
    'epoch', 'mean_reward', *BREAKDOWN_COLUMNS[:-1],
    'policy_loss', 'value_loss', 'entropy', *LOSS_COLUMNS,
    'val_srcc', 'val_plcc', 'clip', 'entropy_coef', 'lambda_mse', 'lambda_rank',
)
REWARD_LOG_COLUMNS = ('epoch', 'batch', 'image', *BREAKDOWN_COLUMNS)
ADVANTAGE_EPS = 1e-8
SCORE_SCALE = 100.0

T = TypeVar('T')
R = TypeVar('R')


@dataclasses.dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_start: float = 0.2
    clip_end: float = 0.1
    entropy_start: float = 0.01
    entropy_end: float = 0.001
    value_coef: float = 0.5
    update_epochs: int = 4
    epochs: int = 300
    lambda_mse_end: float = 1.0
    lambda_rank_end: float = 1.0
    task_ramp_fraction: float = 0.2

    def __post_init__(self) -> None:
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ArgumentError('gamma and gae_lambda must be in [0, 1]')
        if self.clip_start <= 0 or self.clip_end <= 0:
            raise ArgumentError('clip range must be > 0')

    @classmethod
    def from_run(cls, cfg: RunConfig) -> PpoConfig:
        return cls(
            gamma=cfg.gamma,
            gae_lambda=cfg.gae_lambda,
            clip_start=cfg.clip_start,
            clip_end=cfg.clip_end,
            entropy_start=cfg.entropy_start,
            entropy_end=cfg.entropy_end,
            value_coef=cfg.value_coef,
            update_epochs=cfg.update_epochs,
            epochs=cfg.epochs,
            lambda_mse_end=cfg.lambda_mse_end,
            lambda_rank_end=cfg.lambda_rank_end,
            task_ramp_fraction=cfg.task_ramp_fraction,
        )


def gae(
        rewards: Sequence[float],
        values: Sequence[float],
        dones: Sequence[bool],
        bootstrap_value: float,
        gamma: float,
        lam: float,
) -> tuple[Array, Array]:
    """Generalized advantage estimates and the matching returns."""
    n = len(rewards)
    if len(values) != n or len(dones) != n:
        raise ContractViolationError(
            'gae inputs differ in length:\n'
            f' - rewards: {n}\n'
            f' - values: {len(values)}\n'
            f' - dones: {len(dones)}\n',
        )
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        nonterminal = 1.0 - float(dones[t])
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nonterminal * next_value - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + np.asarray(values, dtype=np.float64)


def normalize_advantages(adv: Array, eps: float = ADVANTAGE_EPS) -> Array:
    return (adv - adv.mean()) / (adv.std() + eps)


class Schedule(NamedTuple):
    clip: float
    entropy_coef: float
    lambda_mse: float
    lambda_rank: float


def schedule(epoch: int, total_epochs: int, cfg: PpoConfig) -> Schedule:
    """Linear interpolation of the clip range and entropy weight from start
    to end; the task-reward weights ramp from 0 over the first
    ``task_ramp_fraction`` of training."""
    if not 0 <= epoch < total_epochs:
        raise ArgumentError(f'epoch {epoch} outside [0, {total_epochs})')
    frac = epoch / (total_epochs - 1) if total_epochs > 1 else 1.0
    ramp_len = cfg.task_ramp_fraction * total_epochs
    ramp = 1.0 if ramp_len <= 0 else min(1.0, epoch / ramp_len)
    return Schedule(
        clip=cfg.clip_start + (cfg.clip_end - cfg.clip_start) * frac,
        entropy_coef=cfg.entropy_start + (cfg.entropy_end - cfg.entropy_start) * frac,
        lambda_mse=cfg.lambda_mse_end * ramp,
        lambda_rank=cfg.lambda_rank_end * ramp,
    )


def clipped_surrogate(tape: Tape, ratio: Tensor, advantage: float, clip: float) -> Tensor:
    """``min(rho A, clip(rho, 1 - eps, 1 + eps) A)`` for one step."""
    return tape.minimum(
        tape.scale(ratio, advantage),
        tape.scale(tape.clip(ratio, 1.0 - clip, 1.0 + clip), advantage),
    )


@dataclasses.dataclass
class Episode:
    """The K trajectories of one image plus their advantage targets."""
    bank: ViewportBank
    trajectories: list[Trajectory]
    advantages: list[Array] = dataclasses.field(default_factory=list)
    returns: list[Array] = dataclasses.field(default_factory=list)


class PpoStats(NamedTuple):
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0


def ppo_loss(
        tape: Tape,
        params: ParameterSet,
        episodes: Sequence[Episode],
        clip: float,
        value_coef: float,
        entropy_coef: float,
        mask_revisits: bool = True,
) -> tuple[Tensor, PpoStats]:
    """Clipped surrogate turned into a loss to minimize::

        -E[min(rho A, clip(rho) A)] + c_v E[(V - R)^2] - c_H E[H]
    """
    surrogates: list[Tensor] = []
    value_errs: list[Tensor] = []
    entropies: list[Tensor] = []
    for ep in episodes:
        terms = image_terms(tape, params, ep.bank.features, ep.bank.global_feat)
        for traj, adv, ret in zip(ep.trajectories, ep.advantages, ep.returns):
            replay = evaluate_actions(tape, params, terms, traj.actions, mask_revisits)
            for i, log_prob in enumerate(replay.log_probs):
                ratio = tape.exp(tape.sub(log_prob, traj.log_probs[i]))
                if not math.isfinite(ratio.item()):
                    raise NumericalAbortError(
                        'importance ratio is not finite:\n'
                        f' - new log-prob: {log_prob.item()!r}\n'
                        f' - old log-prob: {traj.log_probs[i]!r}\n'
                        f' - action: {traj.actions[i]} at step {i}\n',
                    )
                surrogates.append(clipped_surrogate(tape, ratio, float(adv[i]), clip))
                value_errs.append(tape.square(tape.sub(replay.values[i], float(ret[i]))))
                entropies.append(replay.entropies[i])
    if not surrogates:
        raise ArgumentError('ppo_loss needs at least one step')
    surrogate = tape.mean(tape.stack(surrogates))
    value_loss = tape.mean(tape.stack(value_errs))
    entropy = tape.mean(tape.stack(entropies))
    loss = tape.add(
        tape.sub(tape.scale(value_loss, value_coef), surrogate),
        tape.scale(entropy, -entropy_coef),
    )
    return loss, PpoStats(-surrogate.item(), value_loss.item(), entropy.item())


def check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise NumericalAbortError(f'{name} is not finite ({value!r}); training aborted')


def ppo_update(
        params: ParameterSet,
        episodes: Sequence[Episode],
        sched: Schedule,
        cfg: RunConfig,
        step: int,
) -> tuple[PpoStats, int]:
    """Runs the update epochs on one batch; returns mean stats and the next
    Adam step counter."""
    stats = []
    for _ in range(cfg.update_epochs):
        params.zero_grad()
        tape = Tape()
        loss, batch_stats = ppo_loss(
            tape, params, episodes, sched.clip, cfg.value_coef,
            sched.entropy_coef, cfg.mask_revisits,
        )
        check_finite('policy loss', loss.item())
        backward(tape, loss)
        check_finite('policy gradient norm', clip_global_norm(params, cfg.max_grad_norm))
        adam_step(
            params, cfg.policy_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, step,
        )
        step += 1
        stats.append(batch_stats)
    return PpoStats(*(float(np.mean(col)) for col in zip(*stats))), step


@dataclasses.dataclass
class Model:
    grid: ViewportGrid
    policy: ParameterSet
    assessor: ParameterSet

    @classmethod
    def build(cls, cfg: RunConfig) -> Model:
        return cls(
            grid=build_grid(cfg.n_yaw, cfg.n_pitch, cfg.fov),
            policy=init_policy_params(config_mod.policy_dims(cfg), cfg.seed),
            assessor=init_assessor_params(config_mod.assessor_dims(cfg), cfg.seed),
        )

    @classmethod
    def load(cls, path: str, cfg: RunConfig) -> Model:
        model = cls.build(cfg)
        checkpoint.load_checkpoint(path, model.policy, model.assessor)
        return model

    def save(self, path: str) -> None:
        checkpoint.save_checkpoint(path, self.policy, self.assessor)


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int) -> list[R]:
    """Ordered map; results never depend on the thread count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


class BankSource:
    """Lazily built clean and augmented banks for a set of samples."""

    def __init__(self, cfg: RunConfig, grid: ViewportGrid) -> None:
        self.cfg = cfg
        self.grid = grid
        self.table = config_mod.severity_table(cfg)
        self._clean = BankCache()
        self._variants = BankCache()

    def clean(self, sample: LabeledSample) -> ViewportBank:
        return self._clean.get(
            sample.name,
            lambda: build_bank(
                sample.load_erp(), self.grid, self.cfg.render_res,
                self.cfg.feature_dim, sample.features,
            ),
        )

    def variant(self, sample: LabeledSample, severity: Severity) -> ViewportBank:
        def build() -> ViewportBank:
            seed = derived_seed(self.cfg.seed, 31, *sample.name.encode())
            seed = derived_seed(seed, list(Severity).index(severity))
            img, _ = augment(sample.load_erp(), severity, seed, self.table)
            return build_feature_bank(
                img, self.grid, self.cfg.render_res, self.cfg.feature_dim,
            )
        return self._variants.get((sample.name, severity), build)


def pair_up(n: int) -> list[tuple[int, int]]:
    """Round-robin pairs within a batch: ``(i, i + 1)`` wrapping around."""
    if n < 2:
        return []
    if n == 2:
        return [(0, 1)]
    return [(i, (i + 1) % n) for i in range(n)]


def pair_task_rewards(
        q1_hat: float,
        q2_hat: float,
        q1: float,
        q2: float,
        rank_scale: float,
) -> tuple[float, float]:
    """MSE and rank rewards of one image pair on the 0-100 score scale.

    The MSE reward compares scores divided by 100. The rank reward sees the
    predicted gap times ``rank_scale``: a larger scale saturates it on smaller
    gaps, and ``rank_scale`` near 0 leaves it at ``-log 2`` whatever the order.
    """
    r_mse = mse_reward(
        q1_hat / SCORE_SCALE, q2_hat / SCORE_SCALE, q1 / SCORE_SCALE, q2 / SCORE_SCALE,
    )
    return r_mse, rank_reward(q1_hat * rank_scale, q2_hat * rank_scale, q1, q2)


class BatchResult(NamedTuple):
    breakdowns: list[RewardBreakdown]
    rewards: list[float]
    ppo: PpoStats
    losses: dict[str, float]


class Trainer:
    def __init__(
            self,
            cfg: RunConfig,
            model: Model,
            train_samples: Sequence[LabeledSample],
            val_samples: Sequence[LabeledSample],
            out_dir: str,
    ) -> None:
        if len(train_samples) < 2:
            raise ArgumentError('training needs at least two images')
        self.cfg = cfg
        self.model = model
        self.train_samples = list(train_samples)
        self.val_samples = list(val_samples)
        self.out_dir = out_dir
        self.ppo_cfg = PpoConfig.from_run(cfg)
        self.weights = config_mod.loss_weights(cfg)
        self.banks = BankSource(cfg, model.grid)
        self.policy_step = 1
        self.assessor_step = 1

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.out_dir, CHECKPOINT_NAME)

    def batches(self, epoch: int) -> list[list[int]]:
        rng = np.random.default_rng([self.cfg.seed, epoch, 1])
        order = [int(i) for i in rng.permutation(len(self.train_samples))]
        bs = self.cfg.batch_size
        ret = [order[i:i + bs] for i in range(0, len(order), bs)]
        ret = [b for b in ret if len(b) >= 2]
        if self.cfg.batches_per_epoch > 0:
            ret = ret[:self.cfg.batches_per_epoch]
        return ret

    def _rollout(self, bank: ViewportBank, seed: int) -> list[Trajectory]:
        return rollout(
            bank.features, bank.global_feat, self.model.policy,
            self.cfg.num_scanpaths, self.cfg.scanpath_length,
            np.random.default_rng(seed), self.cfg.mask_revisits,
        )

    def _image_rewards(
            self,
            bank: ViewportBank,
            trajs: list[Trajectory],
            r_mse: float,
            r_rank: float,
            sched: Schedule,
    ) -> tuple[RewardBreakdown, float]:
        """Fills the trajectories' rewards; returns the weighted breakdown
        and the total reward of the image."""
        coeffs = config_mod.reward_coeffs(self.cfg, sched.lambda_mse, sched.lambda_rank)
        div = diversity_terms([t.actions for t in trajs], bank.size)
        episodic = (
            div.reward(coeffs.beta_cov, coeffs.beta_jac)
            + coeffs.lambda_mse * r_mse
            + coeffs.lambda_rank * r_rank
        )
        step_sums = []
        weighted = []
        for traj in trajs:
            terms = [
                s.weighted(coeffs)
                for s in bank_step_terms(bank, traj.actions, coeffs.gamma_eq)
            ]
            weighted.extend(terms)
            step_rewards = [sum(s) for s in terms]
            step_sums.append(sum(step_rewards))
            assign_step_rewards(traj, step_rewards, episodic)
        k = len(trajs)
        breakdown = RewardBreakdown(
            ent=sum(s.ent for s in weighted) / k,
            ssim=sum(s.ssim for s in weighted) / k,
            nov=sum(s.nov for s in weighted) / k,
            eqb=sum(s.eqb for s in weighted) / k,
            div_cov=coeffs.beta_cov * div.coverage,
            div_jac=-coeffs.beta_jac * div.jaccard,
            mse=coeffs.lambda_mse * r_mse,
            rank=coeffs.lambda_rank * r_rank,
        )
        total = total_reward(
            step_sums, div.reward(coeffs.beta_cov, coeffs.beta_jac),
            r_mse, r_rank, coeffs.lambda_mse, coeffs.lambda_rank,
        )
        return breakdown, total

    def _variant_paths(
            self,
            bank: ViewportBank,
            trajs: list[Trajectory],
            seed: int,
    ) -> list[Sequence[int]]:
        if self.cfg.variant_scanpaths == 'shared':
            return [t.actions for t in trajs]
        return [t.actions for t in self._rollout(bank, seed)]

    def _assessor_step(
            self,
            samples: list[LabeledSample],
            banks: list[ViewportBank],
            trajs: list[list[Trajectory]],
            pairs: list[tuple[int, int]],
            seed: int,
    ) -> dict[str, float]:
        cfg = self.cfg
        params = self.model.assessor
        params.zero_grad()
        tape = Tape()

        def predict(bank: ViewportBank, paths: Sequence[Sequence[int]]) -> Tensor:
            q, _ = predict_image(
                tape, params, bank.features, bank.global_feat, paths, cfg.raw_output,
            )
            return q

        clean = [predict(b, [t.actions for t in ts]) for b, ts in zip(banks, trajs)]
        variants: dict[tuple[int, Severity], Tensor] = {}
        rng = np.random.default_rng(seed)
        cross_levels = [list(Severity)[int(rng.integers(3))] for _ in pairs]
        if cfg.augment:
            for i, sample in enumerate(samples):
                for severity in Severity:
                    vbank = self.banks.variant(sample, severity)
                    paths = self._variant_paths(
                        vbank, trajs[i], derived_seed(seed, i, list(Severity).index(severity)),
                    )
                    variants[i, severity] = predict(vbank, paths)

        sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
        terms: list[Tensor] = []
        for (a, b), level in zip(pairs, cross_levels):
            qa, qb = samples[a].mos, samples[b].mos
            s = rank_sign(qa, qb)
            comps = TapeComponents(
                mse=tape_mse(tape, clean[a], clean[b], qa, qb),
                rank=tape_rank(tape, clean[a], clean[b], s),
                cross=(
                    tape_cross(tape, variants[a, level], variants[b, level], s)
                    if cfg.augment else None
                ),
            )
            terms.append(tape.scale(tape_total(tape, comps, self.weights), 1 / len(pairs)))
            assert comps.mse is not None and comps.rank is not None
            sums['loss_mse'] += comps.mse.item() / len(pairs)
            sums['loss_rank'] += comps.rank.item() / len(pairs)
            if comps.cross is not None:
                sums['loss_cross'] += comps.cross.item() / len(pairs)
        if cfg.augment:
            for i in range(len(samples)):
                comps = TapeComponents(
                    cons=tape_cons(tape, clean[i], variants[i, Severity.WEAK]),
                    triplet=tape_triplet(
                        tape, clean[i], variants[i, Severity.MILD],
                        variants[i, Severity.STRONG], self.weights,
                    ),
                )
                terms.append(
                    tape.scale(tape_total(tape, comps, self.weights), 1 / len(samples)),
                )
                assert comps.cons is not None and comps.triplet is not None
                sums['loss_cons'] += comps.cons.item() / len(samples)
                sums['loss_triplet'] += comps.triplet.item() / len(samples)

        loss = terms[0]
        for term in terms[1:]:
            loss = tape.add(loss, term)
        sums['loss_total'] = loss.item()
        check_finite('assessor loss', loss.item())
        backward(tape, loss)
        check_finite(
            'assessor gradient norm', clip_global_norm(params, cfg.max_grad_norm),
        )
        adam_step(
            params, cfg.assessor_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
            self.assessor_step,
        )
        self.assessor_step += 1
        return sums

    def train_batch(self, epoch: int, batch_no: int, batch: list[int]) -> BatchResult:
        cfg = self.cfg
        sched = schedule(epoch, cfg.epochs, self.ppo_cfg)
        samples = [self.train_samples[i] for i in batch]
        banks = parallel_map(self.banks.clean, samples, cfg.threads)
        seeds = [derived_seed(cfg.seed, epoch, batch_no, slot, 2) for slot in range(len(batch))]
        trajs = parallel_map(
            lambda item: self._rollout(*item), list(zip(banks, seeds)), cfg.threads,
        )
        q_hat = [
            score_image(
                self.model.assessor, bank.features, bank.global_feat,
                [t.actions for t in ts], cfg.raw_output,
            )[0]
            for bank, ts in zip(banks, trajs)
        ]

        # pair rewards go to both images, averaged over the pairs each is in
        pairs = pair_up(len(batch))
        mse_acc = np.zeros(len(batch))
        rank_acc = np.zeros(len(batch))
        counts = np.zeros(len(batch))
        for a, b in pairs:
            r_mse, r_rank = pair_task_rewards(
                q_hat[a], q_hat[b], samples[a].mos, samples[b].mos, cfg.rank_reward_scale,
            )
            for i in (a, b):
                mse_acc[i] += r_mse
                rank_acc[i] += r_rank
                counts[i] += 1

        breakdowns = []
        totals = []
        episodes = []
        for i, (bank, ts) in enumerate(zip(banks, trajs)):
            n = max(counts[i], 1.0)
            breakdown, total = self._image_rewards(
                bank, ts, float(mse_acc[i] / n), float(rank_acc[i] / n), sched,
            )
            breakdowns.append(breakdown)
            totals.append(total)
            ep = Episode(bank, ts)
            for traj in ts:
                adv, ret = gae(
                    traj.rewards, traj.values, traj.dones, 0.0,
                    cfg.gamma, cfg.gae_lambda,
                )
                ep.advantages.append(adv)
                ep.returns.append(ret)
            episodes.append(ep)

        flat = normalize_advantages(np.concatenate([a for ep in episodes for a in ep.advantages]))
        start = 0
        for ep in episodes:
            for j, adv in enumerate(ep.advantages):
                ep.advantages[j] = flat[start:start + len(adv)]
                start += len(adv)

        stats = PpoStats()
        if not cfg.freeze_policy:
            stats, self.policy_step = ppo_update(
                self.model.policy, episodes, sched, cfg, self.policy_step,
            )
        losses = self._assessor_step(
            samples, banks, trajs, pairs, derived_seed(cfg.seed, epoch, batch_no, 3),
        )
        return BatchResult(breakdowns, totals, stats, losses)


def visitation_rate(
        scanpaths: Sequence[Sequence[Sequence[int]]],
        samples: Sequence[LabeledSample],
        grid: ViewportGrid,
) -> float:
    """Fraction of scanpath steps whose viewport center lies inside a
    distorted region of that image's scene."""
    hits = 0
    steps = 0
    for paths, sample in zip(scanpaths, samples):
        regions = [r for r in sample.scene.regions if r.weight > 0]
        for path in paths:
            for i in path:
                vp = grid[i]
                steps += 1
                if any(bool(r.contains(vp.yaw, vp.pitch)) for r in regions):
                    hits += 1
    if steps == 0:
        raise ArgumentError('visitation rate needs at least one step')
    return hits / steps


class Prediction(NamedTuple):
    sample: LabeledSample
    q_hat: float
    per_path: list[float]
    scanpaths: list[tuple[int, ...]]


def predict_samples(
        model: Model,
        banks: BankSource,
        samples: Sequence[LabeledSample],
        k: int,
        t: int,
        seed: int,
        cfg: RunConfig,
        greedy: bool = False,
) -> list[Prediction]:
    def one(item: tuple[int, LabeledSample]) -> Prediction:
        idx, sample = item
        bank = banks.clean(sample)
        trajs = rollout(
            bank.features, bank.global_feat, model.policy, k, t,
            np.random.default_rng([seed, idx]), cfg.mask_revisits, greedy,
        )
        paths = [tuple(tr.actions) for tr in trajs]
        q, per_path = score_image(
            model.assessor, bank.features, bank.global_feat, paths, cfg.raw_output,
        )
        return Prediction(sample, q, per_path, paths)
    return parallel_map(one, list(enumerate(samples)), cfg.threads)


def evaluate(
        model: Model,
        samples: Sequence[LabeledSample],
        cfg: RunConfig,
        k: int | None = None,
        t: int | None = None,
        seed: int | None = None,
        banks: BankSource | None = None,
) -> tuple[EvalReport, list[Prediction]]:
    """Rolls out and scores every sample with a fixed evaluation seed."""
    banks = BankSource(cfg, model.grid) if banks is None else banks
    preds = predict_samples(
        model, banks, samples,
        cfg.num_scanpaths if k is None else k,
        cfg.scanpath_length if t is None else t,
        cfg.eval_seed if seed is None else seed,
        cfg,
    )
    report = EvalReport.from_pairs(
        [p.sample.mos for p in preds], [p.q_hat for p in preds], cfg.plcc_logistic,
    )
    return report, preds


class TrainResult(NamedTuple):
    model: Model
    history: list[dict[str, float]]


def _safe_eval(
        model: Model,
        samples: Sequence[LabeledSample],
        cfg: RunConfig,
        banks: BankSource,
) -> tuple[float, float]:
    if len(samples) < 2:
        return float('nan'), float('nan')
    try:
        report, _ = evaluate(model, samples, cfg, banks=banks)
    except UndefinedCorrelationError:
        return float('nan'), float('nan')
    return report.srcc, report.plcc


def train(
        cfg: RunConfig,
        train_samples: Sequence[LabeledSample],
        val_samples: Sequence[LabeledSample],
        out_dir: str,
        model: Model | None = None,
) -> TrainResult:
    """Joint policy/assessor training; writes the checkpoint after every
    epoch, the metrics CSV and the per-episode reward CSV under
    ``out_dir``."""
    model = Model.build(cfg) if model is None else model
    trainer = Trainer(cfg, model, train_samples, val_samples, out_dir)
    val_banks = BankSource(cfg, model.grid)
    model.save(trainer.checkpoint_path)

    history = []
    with CsvLog(os.path.join(out_dir, METRICS_NAME), METRIC_COLUMNS) as metrics_log, \
            CsvLog(os.path.join(out_dir, REWARDS_NAME), REWARD_LOG_COLUMNS) as reward_log:
        for epoch in range(cfg.epochs):
            sched = schedule(epoch, cfg.epochs, trainer.ppo_cfg)
            results = []
            for batch_no, batch in enumerate(trainer.batches(epoch)):
                result = trainer.train_batch(epoch, batch_no, batch)
                results.append(result)
                for idx, breakdown in zip(batch, result.breakdowns):
                    reward_log.row({
                        'epoch': epoch,
                        'batch': batch_no,
                        'image': trainer.train_samples[idx].name,
                        **breakdown.row(),
                    })

            breakdown = mean_breakdown([b for r in results for b in r.breakdowns])
            row: dict[str, float] = {
                'epoch': epoch,
                'mean_reward': float(np.mean([x for r in results for x in r.rewards])),
                **{k: v for k, v in breakdown.row().items() if k != 'total'},
                **{
                    name: float(np.mean([getattr(r.ppo, name) for r in results]))
                    for name in PpoStats._fields
                },
                **{
                    name: float(np.mean([r.losses[name] for r in results]))
                    for name in LOSS_COLUMNS
                },
                **sched._asdict(),
            }
            if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                row['val_srcc'], row['val_plcc'] = _safe_eval(
                    model, val_samples, cfg, val_banks,
                )
            else:
                row['val_srcc'] = row['val_plcc'] = float('nan')

            model.save(trainer.checkpoint_path)
            metrics_log.row(row)
            history.append(row)
            status(
                f'epoch {epoch + 1}/{cfg.epochs} '
                f'reward={row["mean_reward"]:.4f} '
                f'loss={row["loss_total"]:.3f} '
                f'val_srcc={row["val_srcc"]:.4f} val_plcc={row["val_plcc"]:.4f}',
            )
    return TrainResult(model, history)
