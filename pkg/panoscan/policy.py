"""Auto-regressive viewport policy and its critic.

Scoring of candidate ``j`` given history ``h`` and global descriptor ``g``::

    z_j = v . tanh(W_h h + W_g g + W_f f_j + b) + mask_j

``h`` is the top state of a stack of GRU layers fed, at each step, the
feature of the viewport just chosen; the initial state is zero, so the first
choice depends on ``g`` and the candidates only.
"""
from __future__ import annotations

import dataclasses
from collections.abc import Sequence
from typing import Any
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

from panoscan.diffcore import Array
from panoscan.diffcore import log_sum_exp
from panoscan.diffcore import no_grad
from panoscan.diffcore import ParameterSet
from panoscan.diffcore import softmax_array
from panoscan.diffcore import Tape
from panoscan.diffcore import Tensor
from panoscan.errors import ArgumentError
from panoscan.errors import ContractViolationError
from panoscan.sphere_geom import ViewportGrid

GRU_GATES = ('z', 'r', 'n')


class PolicyDims(NamedTuple):
    feature_dim: int = 64
    hidden_dim: int = 64
    score_dim: int = 64
    gru_layers: int = 6
    critic_hidden: int = 64


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> Array:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_policy_params(dims: PolicyDims, seed: int) -> ParameterSet:
    """GRU stack, scoring weights and critic head in one set."""
    rng = np.random.default_rng([seed, 101])
    d, dh, dz = dims.feature_dim, dims.hidden_dim, dims.score_dim
    params = ParameterSet()
    for layer in range(dims.gru_layers):
        d_in = d if layer == 0 else dh
        for gate in GRU_GATES:
            params.add(f'gru.{layer}.W_{gate}', _uniform(rng, (dh, d_in), d_in))
            params.add(f'gru.{layer}.U_{gate}', _orthogonal(rng, dh))
            params.add(f'gru.{layer}.b_{gate}', np.zeros(dh))
    params.add('W_h', _uniform(rng, (dz, dh), dh))
    params.add('W_g', _uniform(rng, (dz, d), d))
    params.add('W_f', _uniform(rng, (dz, d), d))
    params.add('b', np.zeros(dz))
    params.add('v', _uniform(rng, (dz,), dz))
    params.add('critic.W1', _uniform(rng, (dims.critic_hidden, dh + d), dh + d))
    params.add('critic.b1', np.zeros(dims.critic_hidden))
    params.add('critic.W2', _uniform(rng, (dims.critic_hidden,), dims.critic_hidden))
    params.add('critic.b2', np.zeros(()))
    return params


def gru_layers(params: ParameterSet) -> int:
    n = 0
    while f'gru.{n}.W_z' in params:
        n += 1
    return n


def gru_update(
        tape: Tape,
        h: Tensor,
        x: Tensor,
        params: ParameterSet,
        layer: int,
) -> Tensor:
    """One GRU cell: ``h' = (1 - z) * h + z * tanh(W_n x + U_n (r * h) + b_n)``."""
    p = f'gru.{layer}.'
    if h.shape != (params[p + 'U_z'].shape[0],):
        raise ContractViolationError(
            f'gru layer {layer} state has shape {h.shape}, '
            f'expected {(params[p + "U_z"].shape[0],)}',
        )

    def gate(name: str, hh: Tensor) -> Tensor:
        return tape.add(
            tape.add(
                tape.matvec(params[p + f'W_{name}'], x),
                tape.matvec(params[p + f'U_{name}'], hh),
            ),
            params[p + f'b_{name}'],
        )

    z = tape.sigmoid(gate('z', h))
    r = tape.sigmoid(gate('r', h))
    n = tape.tanh(gate('n', tape.mul(r, h)))
    return tape.add(h, tape.mul(z, tape.sub(n, h)))


def gru_stack(
        tape: Tape,
        states: Sequence[Tensor],
        x: Tensor,
        params: ParameterSet,
) -> list[Tensor]:
    """Runs every layer once; layer ``l + 1`` reads layer ``l``'s output."""
    ret = []
    inp = x
    for layer, h in enumerate(states):
        inp = gru_update(tape, h, inp, params, layer)
        ret.append(inp)
    return ret


class ImageTerms(NamedTuple):
    """Per-image parts of the score that do not depend on the history."""
    proj_f: Tensor  # (X, d_z): W_f f_j for every candidate
    proj_g: Tensor  # (d_z,): W_g g + b
    g: Tensor
    feats: Tensor


def image_terms(tape: Tape, params: ParameterSet, feats: Array, g: Array) -> ImageTerms:
    tf, tg = tape.const(feats), tape.const(g)
    return ImageTerms(
        proj_f=tape.matvec_rows(params['W_f'], tf),
        proj_g=tape.add(tape.matvec(params['W_g'], tg), params['b']),
        g=tg,
        feats=tf,
    )


def score_with(
        tape: Tape,
        params: ParameterSet,
        h: Tensor,
        terms: ImageTerms,
        mask: npt.NDArray[np.bool_] | None = None,
) -> Tensor:
    base = tape.add(tape.matvec(params['W_h'], h), terms.proj_g)
    act = tape.tanh(tape.add_rows(terms.proj_f, base))
    logits = tape.matvec(act, params['v'])
    if mask is not None and np.any(mask):
        logits = tape.masked(logits, mask)
    return logits


def score_viewports(
        tape: Tape,
        params: ParameterSet,
        h: Tensor,
        g: Array,
        feats: Array,
        mask: npt.NDArray[np.bool_] | None = None,
) -> Tensor:
    """Logits over the ``X`` candidates; ``mask[j]`` true sets ``z_j`` to
    ``-inf``."""
    if mask is not None and mask.shape != (feats.shape[0],):
        raise ContractViolationError(
            f'mask has shape {mask.shape}, expected {(feats.shape[0],)}',
        )
    return score_with(tape, params, h, image_terms(tape, params, feats, g), mask)


def critic_value(tape: Tape, params: ParameterSet, h: Tensor, g: Tensor) -> Tensor:
    """``V(s)`` from ``[h; g]`` only."""
    hidden = tape.tanh(
        tape.add(tape.matvec(params['critic.W1'], tape.concat(h, g)), params['critic.b1']),
    )
    return tape.add(tape.dot(params['critic.W2'], hidden), params['critic.b2'])


@dataclasses.dataclass(frozen=True)
class PolicyState:
    layers: tuple[Array, ...]
    g: Array
    visited: tuple[int, ...] = ()

    @property
    def h(self) -> Array:
        return self.layers[-1]

    @property
    def t(self) -> int:
        return len(self.visited)


def initial_state(params: ParameterSet, g: Array) -> PolicyState:
    dh = params['W_h'].shape[1]
    return PolicyState(
        layers=tuple(np.zeros(dh) for _ in range(gru_layers(params))),
        g=np.asarray(g, dtype=np.float64),
    )


def visit_mask(x: int, visited: Sequence[int], mask_revisits: bool) -> npt.NDArray[np.bool_]:
    mask = np.zeros(x, dtype=bool)
    if mask_revisits:
        mask[list(visited)] = True
    return mask


def choose(probs: Array, rng: np.random.Generator | None, greedy: bool) -> int:
    """Samples from ``probs``; greedy mode takes the argmax, lowest index on
    ties."""
    if greedy:
        return int(np.argmax(probs))
    if rng is None:
        raise ArgumentError('sampling needs a random generator')
    return int(rng.choice(probs.shape[0], p=probs))


def initial_distribution(params: ParameterSet, g: Array, feats: Array) -> Array:
    tape = no_grad()
    h = tape.const(np.zeros(params['W_h'].shape[1]))
    return softmax_array(score_viewports(tape, params, h, g, feats).data)


def select_initial(
        params: ParameterSet,
        g: Array,
        feats: Array,
        rng: np.random.Generator | None,
        greedy: bool = False,
) -> int:
    """First viewport from the global descriptor alone: zero history, no
    mask."""
    return choose(initial_distribution(params, g, feats), rng, greedy)


class StepResult(NamedTuple):
    action: int
    log_prob: float
    value: float
    entropy: float
    state: PolicyState


def step(
        state: PolicyState,
        feats: Array,
        params: ParameterSet,
        rng: np.random.Generator | None,
        mask_revisits: bool = True,
        greedy: bool = False,
        terms: ImageTerms | None = None,
        action: int | None = None,
) -> StepResult:
    """One policy step; a given ``action`` is taken instead of sampling one."""
    tape = no_grad()
    if terms is None:
        terms = image_terms(tape, params, feats, state.g)
    h = tape.const(state.h)
    mask = visit_mask(feats.shape[0], state.visited, mask_revisits)
    z = score_with(tape, params, h, terms, mask).data
    if action is None:
        action = choose(softmax_array(z), rng, greedy)
    value = critic_value(tape, params, h, terms.g).item()
    entropy = tape.entropy(tape.const(z)).item()

    layers = gru_stack(
        tape, [tape.const(s) for s in state.layers], tape.const(feats[action]), params,
    )
    nxt = PolicyState(
        layers=tuple(t.data for t in layers),
        g=state.g,
        visited=state.visited + (action,),
    )
    log_prob = float(z[action]) - log_sum_exp(z)
    return StepResult(action, log_prob, value, entropy, nxt)


class Scanpath(NamedTuple):
    indices: tuple[int, ...]
    log_probs: tuple[float, ...]


@dataclasses.dataclass
class Trajectory:
    """Per-step records of one episode; ``rewards`` is filled in by the
    reward stack after the rollout."""
    actions: list[int] = dataclasses.field(default_factory=list)
    log_probs: list[float] = dataclasses.field(default_factory=list)
    values: list[float] = dataclasses.field(default_factory=list)
    rewards: list[float] = dataclasses.field(default_factory=list)
    dones: list[bool] = dataclasses.field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def scanpath(self) -> Scanpath:
        return Scanpath(tuple(self.actions), tuple(self.log_probs))


def rollout(
        feats: Array,
        g: Array,
        params: ParameterSet,
        k: int,
        t: int,
        rng: np.random.Generator | None,
        mask_revisits: bool = True,
        greedy: bool = False,
) -> list[Trajectory]:
    """``k`` independent episodes of exactly ``t`` steps each."""
    if k < 1 or t < 1:
        raise ArgumentError(f'need K >= 1 and T >= 1, got K={k} T={t}')
    if mask_revisits and t > feats.shape[0]:
        raise ArgumentError(
            f'T={t} exceeds the {feats.shape[0]} viewports with revisits masked',
        )
    terms = image_terms(no_grad(), params, feats, g)
    ret = []
    for _ in range(k):
        state = initial_state(params, g)
        traj = Trajectory()
        for i in range(t):
            first = select_initial(params, g, feats, rng, greedy) if i == 0 else None
            result = step(state, feats, params, rng, mask_revisits, greedy, terms, first)
            traj.actions.append(result.action)
            traj.log_probs.append(result.log_prob)
            traj.values.append(result.value)
            traj.rewards.append(0.0)
            traj.dones.append(i == t - 1)
            state = result.state
        ret.append(traj)
    return ret


class Replay(NamedTuple):
    log_probs: list[Tensor]
    values: list[Tensor]
    entropies: list[Tensor]


def evaluate_actions(
        tape: Tape,
        params: ParameterSet,
        terms: ImageTerms,
        actions: Sequence[int],
        mask_revisits: bool = True,
) -> Replay:
    """Replays stored actions under ``tape`` so the PPO loss can
    differentiate log-probabilities, values and entropies."""
    dh = params['W_h'].shape[1]
    x = terms.feats.shape[0]
    states = [tape.const(np.zeros(dh)) for _ in range(gru_layers(params))]
    ret = Replay([], [], [])
    for i, action in enumerate(actions):
        h = states[-1]
        z = score_with(tape, params, h, terms, visit_mask(x, actions[:i], mask_revisits))
        ret.log_probs.append(tape.log_softmax_at(z, action))
        ret.entropies.append(tape.entropy(z))
        ret.values.append(critic_value(tape, params, h, terms.g))
        if i + 1 < len(actions):
            states = gru_stack(tape, states, tape.take(terms.feats, action), params)
    return ret


def scanpath_json(
        image: str,
        k: int,
        indices: Sequence[int],
        grid: ViewportGrid,
        score: float,
) -> dict[str, Any]:
    return {
        'image': image,
        'k': k,
        'indices': [int(i) for i in indices],
        'yaw_pitch': [[grid[i].yaw, grid[i].pitch] for i in indices],
        'score': score,
    }
