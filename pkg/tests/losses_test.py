import math

import numpy as np
import pytest

from panoscan import losses
from panoscan.diffcore import check_gradients
from panoscan.diffcore import ParameterSet
from panoscan.diffcore import Tape
from panoscan.errors import ArgumentError
from panoscan.losses import LossComponents
from panoscan.losses import LossWeights
from panoscan.losses import TapeComponents


def _params(**values):
    ret = ParameterSet()
    for name, value in values.items():
        ret.add(name, value)
    return ret


def test_l_mse():
    assert losses.l_mse(50.0, 60.0, 40.0, 70.0) == 200.0


@pytest.mark.parametrize(
    ('q1_hat', 'q2_hat', 's', 'expected'),
    (
        (10.0, 10.0, 1.0, math.log(2)),
        (30.0, 10.0, 0.0, math.log(2)),
        (11.0, 10.0, 1.0, math.log1p(math.exp(-1.0))),
        (11.0, 10.0, -1.0, math.log1p(math.exp(1.0))),
    ),
)
def test_l_rank(q1_hat, q2_hat, s, expected):
    assert losses.l_rank(q1_hat, q2_hat, s) == pytest.approx(expected)


def test_l_rank_rejects_sign():
    with pytest.raises(ArgumentError):
        losses.l_rank(1.0, 2.0, 0.5)


def test_l_rank_is_stable_for_large_gaps():
    assert losses.l_rank(0.0, 1000.0, 1.0) == pytest.approx(1000.0)
    assert losses.l_rank(1000.0, 0.0, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_l_cons():
    assert losses.l_cons(70.0, 67.0) == 9.0


@pytest.mark.parametrize(
    ('clean', 'mild', 'strong', 'expected'),
    (
        # well ordered with room to spare
        (80.0, 60.0, 30.0, 0.0),
        # mild within margin of clean
        (80.0, 79.0, 30.0, 1.0),
        # strong above mild and clean
        (50.0, 40.0, 60.0, 22.0 + 14.0),
        (50.0, 50.0, 50.0, 8.0),
    ),
)
def test_l_triplet(clean, mild, strong, expected):
    assert losses.l_triplet(clean, mild, strong, 2.0, 2.0, 4.0) == pytest.approx(expected)


def test_l_triplet_rejects_margins():
    with pytest.raises(ArgumentError):
        losses.l_triplet(1.0, 1.0, 1.0, -1.0, 0.0, 0.0)


def test_l_cross_is_rank_on_augmented_scores():
    assert losses.l_cross(40.0, 45.0, 1.0) == losses.l_rank(40.0, 45.0, 1.0)


def test_l_total():
    c = LossComponents(mse=10.0, rank=1.0, cons=2.0, triplet=3.0, cross=4.0)
    assert losses.l_total(c, LossWeights()) == pytest.approx(10.0 + 0.5 + 0.4 + 0.6 + 1.2)


def test_loss_weights_rejects_negative():
    with pytest.raises(ArgumentError):
        LossWeights(beta_cons=-0.1)


def test_tape_versions_match_float_versions():
    tape = Tape()
    a, b, c = tape.const(61.0), tape.const(55.0), tape.const(58.0)
    w = LossWeights()
    assert losses.tape_mse(tape, a, b, 60.0, 50.0).item() == losses.l_mse(61.0, 55.0, 60.0, 50.0)
    assert losses.tape_rank(tape, a, b, -1.0).item() == pytest.approx(
        losses.l_rank(61.0, 55.0, -1.0),
    )
    assert losses.tape_cons(tape, a, b).item() == losses.l_cons(61.0, 55.0)
    assert losses.tape_triplet(tape, b, c, a, w).item() == pytest.approx(
        losses.l_triplet(55.0, 58.0, 61.0, w.margin1, w.margin2, w.margin3),
    )
    assert losses.tape_cross(tape, a, b, 1.0).item() == pytest.approx(
        losses.l_cross(61.0, 55.0, 1.0),
    )


def test_tied_rank_has_no_gradient():
    params = _params(a=3.0, b=5.0)
    tape = Tape()
    tape.backward(losses.tape_rank(tape, params['a'], params['b'], 0.0))
    assert params['a'].grad == 0.0
    assert params['b'].grad == 0.0


def test_tape_total():
    tape = Tape()
    c = TapeComponents(mse=tape.const(10.0), cross=tape.const(4.0))
    assert losses.tape_total(tape, c, LossWeights()).item() == pytest.approx(10.0 + 1.2)
    assert losses.tape_total(tape, TapeComponents(), LossWeights()).item() == 0.0


def test_tape_total_skips_zero_weights():
    tape = Tape()
    c = TapeComponents(mse=tape.const(float('nan')), rank=tape.const(2.0))
    got = losses.tape_total(tape, c, LossWeights(beta_mse=0.0))
    assert got.item() == pytest.approx(1.0)


@pytest.mark.parametrize('seed', range(50))
def test_total_loss_gradient_matches_finite_differences(seed):
    clean, weak, mild, strong, other = np.random.default_rng(seed).uniform(5.0, 95.0, size=5)
    params = _params(clean=clean, weak=weak, mild=mild, strong=strong, other=other)
    w = LossWeights()

    def loss(tape):
        p = params
        return losses.tape_total(tape, TapeComponents(
            mse=losses.tape_mse(tape, p['clean'], p['other'], 70.0, 35.0),
            rank=losses.tape_rank(tape, p['clean'], p['other'], 1.0),
            cons=losses.tape_cons(tape, p['clean'], p['weak']),
            triplet=losses.tape_triplet(tape, p['clean'], p['mild'], p['strong'], w),
            cross=losses.tape_cross(tape, p['strong'], p['other'], 1.0),
        ), w)
    assert check_gradients(loss, params) < 1e-4
