"""Quality head: attention pooling over a scanpath's viewport features,
an MLP on ``[m_k; g]`` and averaging over the K scanpaths."""
from __future__ import annotations

from collections.abc import Sequence
from typing import Any
from typing import NamedTuple

import numpy as np

from panoscan.diffcore import Array
from panoscan.diffcore import no_grad
from panoscan.diffcore import ParameterSet
from panoscan.diffcore import Tape
from panoscan.diffcore import Tensor
from panoscan.errors import ArgumentError

SCORE_RANGE = 100.0


class AssessorDims(NamedTuple):
    feature_dim: int = 64
    attention_dim: int = 64
    mlp_hidden: int = 64


def init_assessor_params(dims: AssessorDims, seed: int) -> ParameterSet:
    rng = np.random.default_rng([seed, 202])
    d, da, hid = dims.feature_dim, dims.attention_dim, dims.mlp_hidden

    def uniform(shape: tuple[int, ...], fan_in: int) -> Array:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = ParameterSet()
    params.add('W_p', uniform((da, d), d))
    params.add('W_g2', uniform((da, d), d))
    params.add('v_a', uniform((da,), da))
    params.add('mlp.W1', uniform((hid, 2 * d), 2 * d))
    params.add('mlp.b1', np.zeros(hid))
    params.add('mlp.W2', uniform((hid,), hid))
    params.add('mlp.b2', np.zeros(()))
    return params


def attention_pool(
        tape: Tape,
        params: ParameterSet,
        feats: Tensor,
        g: Tensor,
) -> tuple[Tensor, Tensor]:
    """``alpha = softmax_t(v_a . tanh(W_p f_t + W_g2 g))``; returns
    ``(sum_t alpha_t f_t, alpha)``."""
    if feats.data.ndim != 2 or feats.shape[0] < 1:
        raise ArgumentError(f'attention pooling needs (T, d) features, got {feats.shape}')
    context = tape.matvec(params['W_g2'], g)
    pre = tape.add_rows(tape.matvec_rows(params['W_p'], feats), context)
    alpha = tape.softmax(tape.matvec(tape.tanh(pre), params['v_a']))
    return tape.weighted_rows(feats, alpha), alpha


def predict_scanpath(
        tape: Tape,
        params: ParameterSet,
        feats: Array,
        g: Array,
        raw_output: bool = False,
) -> Tensor:
    """``Q_k = 100 * sigmoid(MLP([m_k; g]))``, or the bare MLP output in raw
    mode."""
    tg = tape.const(g)
    pooled, _ = attention_pool(tape, params, tape.const(feats), tg)
    hidden = tape.tanh(
        tape.add(tape.matvec(params['mlp.W1'], tape.concat(pooled, tg)), params['mlp.b1']),
    )
    raw = tape.add(tape.dot(params['mlp.W2'], hidden), params['mlp.b2'])
    if raw_output:
        return raw
    return tape.scale(tape.sigmoid(raw), SCORE_RANGE)


def predict_image(
        tape: Tape,
        params: ParameterSet,
        feats: Array,
        g: Array,
        scanpaths: Sequence[Sequence[int]],
        raw_output: bool = False,
) -> tuple[Tensor, list[Tensor]]:
    """Mean of the per-scanpath scores; ``feats`` holds all ``X`` candidate
    features and each scanpath indexes into it."""
    if not scanpaths:
        raise ArgumentError('predict_image needs at least one scanpath')
    per_path = [
        predict_scanpath(tape, params, feats[list(path)], g, raw_output)
        for path in scanpaths
    ]
    return tape.mean(tape.stack(per_path)), per_path


def score_image(
        params: ParameterSet,
        feats: Array,
        g: Array,
        scanpaths: Sequence[Sequence[int]],
        raw_output: bool = False,
) -> tuple[float, list[float]]:
    q, per_path = predict_image(no_grad(), params, feats, g, scanpaths, raw_output)
    return q.item(), [p.item() for p in per_path]


def prediction_json(
        image: str,
        q_hat: float,
        per_path: Sequence[float],
        k: int,
        t: int,
) -> dict[str, Any]:
    return {
        'image': image,
        'Q_hat': q_hat,
        'per_path': list(per_path),
        'K': k,
        'T': t,
    }
