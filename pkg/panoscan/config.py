"""Run configuration: one flat YAML mapping, ``--key value`` overrides and
named ablation presets."""
from __future__ import annotations

import dataclasses
import os.path
from collections.abc import Mapping
from collections.abc import Sequence
from typing import Any

import yaml

from panoscan.assessor import AssessorDims
from panoscan.distortions import Severity
from panoscan.distortions import SeverityTable
from panoscan.errors import ConfigError
from panoscan.errors import DataError
from panoscan.losses import LossWeights
from panoscan.policy import PolicyDims
from panoscan.rewards import RewardCoeffs

SNAPSHOT_NAME = 'config.yaml'
VARIANT_MODES = ('shared', 'fresh')


@dataclasses.dataclass(frozen=True)
class RunConfig:
    # viewport grid and rendering
    n_yaw: int = 8
    n_pitch: int = 4
    fov: float = 90.0
    render_res: int = 224
    erp_width: int = 512
    erp_height: int = 256

    # network sizes
    feature_dim: int = 64
    hidden_dim: int = 64
    score_dim: int = 64
    gru_layers: int = 6
    critic_hidden: int = 64
    attention_dim: int = 64
    mlp_hidden: int = 64

    # scanpaths
    num_scanpaths: int = 15
    scanpath_length: int = 7
    mask_revisits: bool = True
    variant_scanpaths: str = 'shared'

    # rewards
    lambda_ent: float = 0.1
    lambda_ssim: float = 0.5
    lambda_nov: float = 0.5
    lambda_eqb: float = 0.3
    gamma_eq: float = 1.5
    beta_cov: float = 1.0
    beta_jac: float = 0.5
    lambda_mse_end: float = 1.0
    lambda_rank_end: float = 1.0
    task_ramp_fraction: float = 0.2
    rank_reward_scale: float = 0.1

    # ppo
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_start: float = 0.2
    clip_end: float = 0.1
    entropy_start: float = 0.01
    entropy_end: float = 0.001
    value_coef: float = 0.5
    update_epochs: int = 4

    # optimization
    epochs: int = 300
    batch_size: int = 4
    batches_per_epoch: int = 0
    policy_lr: float = 3e-4
    assessor_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float = 1.0
    freeze_policy: bool = False
    eval_every: int = 1

    # assessor objective
    raw_output: bool = False
    augment: bool = True
    beta_mse: float = 1.0
    beta_rank: float = 0.5
    beta_cons: float = 0.2
    beta_triplet: float = 0.2
    beta_cross: float = 0.3
    margin1: float = 2.0
    margin2: float = 2.0
    margin3: float = 4.0

    # augmentation parameter ranges; jitter ranges bound the brightness,
    # contrast and saturation factors, jitter_hue is the hue bound in degrees
    jpeg_weak: tuple[float, ...] = (85, 95)
    jpeg_mild: tuple[float, ...] = (60, 75)
    jpeg_strong: tuple[float, ...] = (20, 40)
    motion_weak: tuple[float, ...] = (3, 7)
    motion_mild: tuple[float, ...] = (7, 11)
    motion_strong: tuple[float, ...] = (11, 19)
    defocus_weak: tuple[float, ...] = (1.0, 2.0)
    defocus_mild: tuple[float, ...] = (2.0, 3.0)
    defocus_strong: tuple[float, ...] = (4.0, 6.0)
    jitter_weak: tuple[float, ...] = (0.95, 1.05)
    jitter_mild: tuple[float, ...] = (0.85, 1.15)
    jitter_strong: tuple[float, ...] = (0.6, 1.4)
    jitter_hue_weak: float = 3.0
    jitter_hue_mild: float = 8.0
    jitter_hue_strong: float = 20.0
    poisson_mild: tuple[float, ...] = (18.0, 30.0)
    poisson_strong: tuple[float, ...] = (6.0, 12.0)

    # data
    dataset_size: int = 200
    split: tuple[float, ...] = (0.8, 0.2)
    label_noise: float = 0.0

    # run
    seed: int = 0
    eval_seed: int = 1234
    threads: int = 1
    plcc_logistic: bool = False
    sweep_ks: tuple[float, ...] = (5, 10, 15, 20, 50)
    sweep_ts: tuple[float, ...] = (4, 7, 15)

    @property
    def num_viewports(self) -> int:
        return self.n_yaw * self.n_pitch

    def replace(self, **changes: Any) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in dataclasses.asdict(self).items()
        }


_DEFAULTS = RunConfig()
FIELDS = {f.name: getattr(_DEFAULTS, f.name) for f in dataclasses.fields(RunConfig)}

ABLATIONS: dict[str, dict[str, Any]] = {
    'no-ser': {
        'lambda_ent': 0.0, 'lambda_ssim': 0.0, 'lambda_nov': 0.0, 'lambda_eqb': 0.0,
    },
    'no-sdr': {'beta_cov': 0.0, 'beta_jac': 0.0},
    'no-tpr': {'lambda_mse_end': 0.0, 'lambda_rank_end': 0.0},
    'no-aug': {
        'augment': False, 'beta_cons': 0.0, 'beta_triplet': 0.0, 'beta_cross': 0.0,
    },
    'no-cons': {'beta_cons': 0.0},
    'no-triplet': {'beta_triplet': 0.0},
    'no-cross': {'beta_cross': 0.0},
    'no-entropy': {'lambda_ent': 0.0},
    'no-dissim': {'lambda_ssim': 0.0},
    'no-novelty': {'lambda_nov': 0.0},
    'no-eqbias': {'lambda_eqb': 0.0},
    'no-joint': {'freeze_policy': True},
}


def _coerce(key: str, value: Any) -> Any:
    if key not in FIELDS:
        raise ConfigError(f'unknown config key {key!r}')
    default = FIELDS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f'{key} must be true or false, got {value!r}')
        return value
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f'{key} must be an integer, got {value!r}')
        return value
    elif isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot, like 3e-4, as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f'{key} must be a number, got {value!r}')
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f'{key} must be a string, got {value!r}')
        return value
    else:
        if isinstance(value, str):
            value = [yaml.safe_load(part) for part in value.split(',') if part.strip()]
        if not isinstance(value, (list, tuple)) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool)
                for v in value
        ):
            raise ConfigError(f'{key} must be a list of numbers, got {value!r}')
        return tuple(value)


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    return cfg.replace(**{k: _coerce(k, v) for k, v in overrides.items()})


def apply_ablations(cfg: RunConfig, names: Sequence[str]) -> RunConfig:
    for name in names:
        if name not in ABLATIONS:
            raise ConfigError(
                'unknown ablation {!r} (known: {})'.format(
                    name, ', '.join(sorted(ABLATIONS)),
                ),
            )
        cfg = apply_overrides(cfg, ABLATIONS[name])
    return cfg


def parse_overrides(args: Sequence[str]) -> dict[str, Any]:
    """Turns ``['--some-key', 'value', '--flag']`` into
    ``{'some_key': <yaml value>, 'flag': True}``."""
    ret: dict[str, Any] = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith('--') or len(arg) == 2:
            raise ConfigError(f'unexpected argument {arg!r}')
        name, eq, raw = arg[2:].partition('=')
        key = name.replace('-', '_')
        if key not in FIELDS:
            raise ConfigError(f'unknown option --{name}')
        if eq:
            i += 1
        elif i + 1 < len(args) and not args[i + 1].startswith('--'):
            raw = args[i + 1]
            i += 2
        else:
            ret[key] = True
            i += 1
            continue
        if isinstance(FIELDS[key], tuple):
            ret[key] = raw
        else:
            try:
                ret[key] = yaml.safe_load(raw)
            except yaml.YAMLError as e:
                raise ConfigError(f'cannot parse --{key}: {e}')
    return ret


def load_config(path: str | None, overrides: Mapping[str, Any] = {}) -> RunConfig:
    raw: Any = {}
    if path is not None:
        try:
            with open(path) as f:
                raw = yaml.safe_load(f)
        except OSError as e:
            raise ConfigError(f'cannot read config {path}: {e}')
        except yaml.YAMLError as e:
            raise ConfigError(f'{path} is not valid YAML: {e}')
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f'{path} must hold a mapping of config keys')
    cfg = apply_overrides(RunConfig(), raw)
    return apply_overrides(cfg, overrides)


def _check(ok: bool, msg: str) -> None:
    if not ok:
        raise ConfigError(msg)


def _check_range(cfg: RunConfig, key: str, lo: float, hi: float) -> None:
    value = getattr(cfg, key)
    _check(
        len(value) == 2 and lo <= value[0] <= value[1] <= hi,
        f'{key} must be [lo, hi] within [{lo}, {hi}], got {list(value)}',
    )


def validate(cfg: RunConfig) -> RunConfig:
    """Rejects out-of-range settings with a :class:`ConfigError`."""
    _check(cfg.n_yaw >= 1 and cfg.n_pitch >= 1, 'n_yaw and n_pitch must be >= 1')
    _check(0 < cfg.fov < 180, f'fov must be in (0, 180), got {cfg.fov}')
    _check(cfg.render_res >= 11, 'render_res must be >= 11 (the SSIM window)')
    _check(
        cfg.erp_width == 2 * cfg.erp_height and cfg.erp_height >= 2,
        f'erp size must be 2:1, got {cfg.erp_width}x{cfg.erp_height}',
    )
    for key in (
            'feature_dim', 'hidden_dim', 'score_dim', 'gru_layers',
            'critic_hidden', 'attention_dim', 'mlp_hidden',
            'num_scanpaths', 'scanpath_length', 'epochs', 'update_epochs',
            'eval_every', 'threads',
    ):
        _check(getattr(cfg, key) >= 1, f'{key} must be >= 1')
    _check(cfg.batch_size >= 2, 'batch_size must be >= 2 (images are paired)')
    _check(cfg.batches_per_epoch >= 0, 'batches_per_epoch must be >= 0')
    _check(
        not cfg.mask_revisits or cfg.scanpath_length <= cfg.num_viewports,
        f'scanpath_length {cfg.scanpath_length} exceeds the '
        f'{cfg.num_viewports} viewports with revisits masked',
    )
    _check(
        cfg.variant_scanpaths in VARIANT_MODES,
        f'variant_scanpaths must be one of {VARIANT_MODES}',
    )
    for key in (
            'lambda_ent', 'lambda_ssim', 'lambda_nov', 'lambda_eqb', 'beta_cov',
            'beta_jac', 'lambda_mse_end', 'lambda_rank_end', 'rank_reward_scale',
            'entropy_start', 'entropy_end', 'value_coef', 'policy_lr',
            'assessor_lr', 'beta_mse', 'beta_rank', 'beta_cons', 'beta_triplet',
            'beta_cross', 'margin1', 'margin2', 'margin3', 'label_noise',
    ):
        _check(getattr(cfg, key) >= 0, f'{key} must be >= 0')
    _check(cfg.gamma_eq > 0, 'gamma_eq must be > 0')
    _check(0 <= cfg.task_ramp_fraction <= 1, 'task_ramp_fraction must be in [0, 1]')
    _check(0 <= cfg.gamma <= 1, 'gamma must be in [0, 1]')
    _check(0 <= cfg.gae_lambda <= 1, 'gae_lambda must be in [0, 1]')
    _check(cfg.clip_start > 0 and cfg.clip_end > 0, 'clip range must be > 0')
    _check(cfg.max_grad_norm > 0, 'max_grad_norm must be > 0')
    _check(0 <= cfg.adam_beta1 < 1 and 0 <= cfg.adam_beta2 < 1, 'adam betas must be in [0, 1)')
    _check(cfg.adam_eps > 0, 'adam_eps must be > 0')

    for level in ('weak', 'mild', 'strong'):
        _check_range(cfg, f'jpeg_{level}', 1, 100)
        _check_range(cfg, f'motion_{level}', 1, 1e9)
        low, high = getattr(cfg, f'motion_{level}')
        _check(
            any(k % 2 == 1 for k in range(int(low), int(high) + 1)),
            f'motion_{level} holds no odd kernel length',
        )
        _check_range(cfg, f'defocus_{level}', 0, 1e9)
        _check_range(cfg, f'jitter_{level}', 0, 1e9)
        low, high = getattr(cfg, f'jitter_{level}')
        _check(
            low <= 1.0 <= high,
            f'jitter_{level} must contain the identity factor 1, got {[low, high]}',
        )
        hue = getattr(cfg, f'jitter_hue_{level}')
        _check(0 <= hue <= 180, f'jitter_hue_{level} must be in [0, 180], got {hue}')
    for level in ('mild', 'strong'):
        _check_range(cfg, f'poisson_{level}', 1e-9, 1e9)

    _check(
        len(cfg.split) in (2, 3) and min(cfg.split) >= 0
        and abs(sum(cfg.split) - 1) < 1e-9,
        f'split must be 2 or 3 fractions summing to 1, got {list(cfg.split)}',
    )
    _check(cfg.dataset_size >= 2, 'dataset_size must be >= 2')
    for key in ('seed', 'eval_seed'):
        _check(getattr(cfg, key) >= 0, f'{key} must be >= 0, got {getattr(cfg, key)}')
    for key in ('sweep_ks', 'sweep_ts'):
        _check(
            all(v >= 1 and float(v).is_integer() for v in getattr(cfg, key)),
            f'{key} must hold positive integers',
        )
    return cfg


def severity_table(cfg: RunConfig) -> SeverityTable:
    def ranges(prefix: str, levels: Sequence[Severity]) -> dict[Severity, tuple[float, float]]:
        ret = {}
        for level in levels:
            lo, hi = getattr(cfg, f'{prefix}_{level.value}')
            ret[level] = (float(lo), float(hi))
        return ret
    every = tuple(Severity)
    return SeverityTable(
        jpeg=ranges('jpeg', every),
        motion_blur=ranges('motion', every),
        defocus_blur=ranges('defocus', every),
        color_jitter=ranges('jitter', every),
        jitter_hue={
            level: float(getattr(cfg, f'jitter_hue_{level.value}')) for level in every
        },
        poisson=ranges('poisson', (Severity.MILD, Severity.STRONG)),
    )


def reward_coeffs(cfg: RunConfig, lambda_mse: float, lambda_rank: float) -> RewardCoeffs:
    return RewardCoeffs(
        lambda_ent=cfg.lambda_ent,
        lambda_ssim=cfg.lambda_ssim,
        lambda_nov=cfg.lambda_nov,
        lambda_eqb=cfg.lambda_eqb,
        gamma_eq=cfg.gamma_eq,
        beta_cov=cfg.beta_cov,
        beta_jac=cfg.beta_jac,
        lambda_mse=lambda_mse,
        lambda_rank=lambda_rank,
    )


def loss_weights(cfg: RunConfig) -> LossWeights:
    return LossWeights(
        beta_mse=cfg.beta_mse,
        beta_rank=cfg.beta_rank,
        beta_cons=cfg.beta_cons,
        beta_triplet=cfg.beta_triplet,
        beta_cross=cfg.beta_cross,
        margin1=cfg.margin1,
        margin2=cfg.margin2,
        margin3=cfg.margin3,
    )


def policy_dims(cfg: RunConfig) -> PolicyDims:
    return PolicyDims(
        feature_dim=cfg.feature_dim,
        hidden_dim=cfg.hidden_dim,
        score_dim=cfg.score_dim,
        gru_layers=cfg.gru_layers,
        critic_hidden=cfg.critic_hidden,
    )


def assessor_dims(cfg: RunConfig) -> AssessorDims:
    return AssessorDims(
        feature_dim=cfg.feature_dim,
        attention_dim=cfg.attention_dim,
        mlp_hidden=cfg.mlp_hidden,
    )


def write_snapshot(cfg: RunConfig, out_dir: str) -> str:
    path = os.path.join(out_dir, SNAPSHOT_NAME)
    try:
        with open(path, 'w') as f:
            yaml.safe_dump(cfg.to_dict(), f, sort_keys=True, default_flow_style=None)
    except OSError as e:
        raise DataError(f'cannot write config snapshot {path}: {e}')
    return path
