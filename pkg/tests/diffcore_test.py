import math

import numpy as np
import pytest

from panoscan import diffcore
from panoscan.diffcore import adam_step
from panoscan.diffcore import check_gradients
from panoscan.diffcore import clip_global_norm
from panoscan.diffcore import no_grad
from panoscan.diffcore import ParameterSet
from panoscan.diffcore import Tape
from panoscan.errors import CheckpointIncompatibleError
from panoscan.errors import ContractViolationError
from panoscan.errors import DegenerateDistributionError
from panoscan.errors import DomainError


def _params(**arrays):
    ret = ParameterSet()
    for name, value in arrays.items():
        ret.add(name, value)
    return ret


@pytest.mark.parametrize(
    ('w', 'x', 'expected'),
    (
        (np.eye(2), [2.0, 3.0], [2.0, 3.0]),
        ([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0], [3.0, 7.0]),
        (np.zeros((3, 2)), [5.0, -1.0], [0.0, 0.0, 0.0]),
    ),
)
def test_matvec(w, x, expected):
    tape = Tape()
    out = tape.matvec(tape.const(w), tape.const(x))
    np.testing.assert_allclose(out.data, expected)


def test_matvec_shape_mismatch():
    tape = Tape()
    with pytest.raises(ContractViolationError):
        tape.matvec(tape.const(np.zeros((2, 3))), tape.const(np.zeros(2)))


@pytest.mark.parametrize(
    ('op', 'arg', 'expected'),
    (
        ('tanh', 0.0, 0.0),
        ('sigmoid', 0.0, 0.5),
        ('exp', 1.0, math.e),
        ('log1p', 0.0, 0.0),
    ),
)
def test_elementwise_unary(op, arg, expected):
    assert abs(Tape().elementwise(op, arg).item() - expected) < 1e-12


def test_elementwise_binary_scalar_broadcast():
    tape = Tape()
    out = tape.elementwise('mul', tape.const([1.0, 2.0]), 3.0)
    np.testing.assert_allclose(out.data, [3.0, 6.0])


def test_log1p_domain_error():
    with pytest.raises(DomainError):
        Tape().log1p(Tape().const(-1.0))


@pytest.mark.parametrize(
    ('logits', 'expected'),
    (
        ([0.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]),
        ([-np.inf, 0.0], [0.0, 1.0]),
        ([1.0, 2.0, 3.0], [0.09003057, 0.24472847, 0.66524096]),
    ),
)
def test_softmax(logits, expected):
    p = Tape().softmax(diffcore.Tensor(logits))
    np.testing.assert_allclose(p.data, expected, atol=1e-8)
    assert abs(p.data.sum() - 1.0) < 1e-12


def test_softmax_masked_entries_are_exactly_zero():
    p = diffcore.softmax_array(np.array([-np.inf, 1.0, -np.inf, 2.0]))
    assert p[0] == 0.0 and p[2] == 0.0


def test_softmax_shift_invariant():
    rng = np.random.default_rng(3)
    z = rng.uniform(-2, 2, size=10)
    np.testing.assert_allclose(
        diffcore.softmax_array(z), diffcore.softmax_array(z + 123.0), atol=1e-12,
    )


def test_softmax_all_masked():
    with pytest.raises(DegenerateDistributionError):
        diffcore.softmax_array(np.array([-np.inf, -np.inf]))


def test_backward_square():
    params = _params(x=3.0)
    tape = Tape()
    diffcore.backward(tape, tape.square(params['x']))
    assert params['x'].grad == 6.0


def test_backward_constant_loss_gives_zero_grads():
    params = _params(x=[1.0, 2.0])
    tape = Tape()
    loss = tape.sum(tape.const([4.0, 5.0]))
    diffcore.backward(tape, loss)
    np.testing.assert_array_equal(params['x'].grad, [0.0, 0.0])


def test_backward_non_scalar_root():
    params = _params(x=[1.0, 2.0])
    tape = Tape()
    y = tape.tanh(params['x'])
    with pytest.raises(ContractViolationError):
        diffcore.backward(tape, y)


def test_backward_accumulates():
    params = _params(x=2.0)
    for _ in range(2):
        tape = Tape()
        diffcore.backward(tape, tape.square(params['x']))
    assert params['x'].grad == 8.0
    params.zero_grad()
    assert params['x'].grad == 0.0


@pytest.mark.parametrize('seed', range(50))
def test_softmax_dot_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = _params(z=rng.uniform(-2, 2, size=5))
    c = rng.uniform(-2, 2, size=5)

    def loss(tape):
        return tape.dot(tape.softmax(params['z']), tape.const(c))
    assert check_gradients(loss, params, floor=1e-6) < 1e-6


def _op_losses():
    # each builds a scalar loss from params a (4,), b (4,), W (3, 4), F (5, 4)
    return {
        'matvec': lambda t, p: t.sum(t.tanh(t.matvec(p['W'], p['a']))),
        'matvec_rows': lambda t, p: t.sum(t.square(t.matvec_rows(p['W'], p['F']))),
        'weighted_rows': lambda t, p: t.dot(
            t.weighted_rows(p['F'], t.softmax(t.matvec(p['F'], p['a']))), p['b'],
        ),
        'add_rows': lambda t, p: t.sum(t.tanh(t.add_rows(p['F'], p['a']))),
        'mul': lambda t, p: t.sum(t.mul(p['a'], p['b'])),
        'sub': lambda t, p: t.sum(t.square(t.sub(p['a'], p['b']))),
        'sigmoid': lambda t, p: t.sum(t.sigmoid(p['a'])),
        'exp': lambda t, p: t.mean(t.exp(p['a'])),
        'log1p': lambda t, p: t.sum(t.log1p(t.square(p['a']))),
        'softplus': lambda t, p: t.sum(t.softplus(p['a'])),
        'concat': lambda t, p: t.sum(t.tanh(t.concat(p['a'], p['b']))),
        'take': lambda t, p: t.sum(t.tanh(t.take(p['F'], 2))),
        'stack': lambda t, p: t.sum(t.square(t.stack([t.dot(p['a'], p['b']), t.sum(p['a'])]))),
        'log_softmax_at': lambda t, p: t.log_softmax_at(p['a'], 1),
        'entropy': lambda t, p: t.entropy(p['a']),
        'masked': lambda t, p: t.log_softmax_at(
            t.masked(p['a'], np.array([True, False, False, True])), 2,
        ),
        'scale': lambda t, p: t.sum(t.scale(t.tanh(p['a']), -2.5)),
        'clip': lambda t, p: t.sum(t.square(t.clip(p['a'], -1.0, 1.0))),
        'minimum': lambda t, p: t.sum(t.minimum(t.square(p['a']), p['b'])),
        'relu': lambda t, p: t.dot(t.relu(p['a']), p['b']),
    }


@pytest.mark.parametrize('seed', range(50))
@pytest.mark.parametrize('name', sorted(_op_losses()))
def test_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    params = _params(
        a=rng.uniform(-2, 2, size=4),
        b=rng.uniform(-2, 2, size=4),
        W=rng.uniform(-2, 2, size=(3, 4)),
        F=rng.uniform(-2, 2, size=(5, 4)),
    )
    fn = _op_losses()[name]
    assert check_gradients(lambda tape: fn(tape, params), params) < 1e-4


def test_backward_is_deterministic():
    rng = np.random.default_rng(1)
    params = _params(W=rng.normal(size=(3, 4)), a=rng.normal(size=4))
    grads = []
    for _ in range(2):
        params.zero_grad()
        tape = Tape()
        loss = tape.sum(tape.tanh(tape.matvec(params['W'], params['a'])))
        diffcore.backward(tape, loss)
        grads.append(params.grads())
    for name in params:
        np.testing.assert_array_equal(grads[0][name], grads[1][name])


def test_no_grad_records_nothing():
    params = _params(x=[1.0, 2.0])
    tape = no_grad()
    out = tape.sum(tape.tanh(params['x']))
    assert len(tape) == 0
    assert not out.requires_grad


@pytest.mark.parametrize(
    ('grad', 'max_norm', 'expected_norm', 'expected_grad'),
    (
        ([0.3, 0.4], 1.0, 0.5, [0.3, 0.4]),
        ([1.2, 1.6], 1.0, 2.0, [0.6, 0.8]),
        ([0.0, 0.0], 1.0, 0.0, [0.0, 0.0]),
    ),
)
def test_clip_global_norm(grad, max_norm, expected_norm, expected_grad):
    params = _params(x=[0.0, 0.0])
    params['x'].grad[...] = grad
    assert clip_global_norm(params, max_norm) == pytest.approx(expected_norm)
    np.testing.assert_allclose(params['x'].grad, expected_grad)


def test_adam_zero_grad_leaves_params():
    params = _params(x=[1.0, -2.0])
    adam_step(params, lr=3e-4)
    np.testing.assert_array_equal(params['x'].data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    params = _params(x=1.0)
    params['x'].grad[...] = 1.0
    adam_step(params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, t=1)
    assert params['x'].data == pytest.approx(1.0 - 3e-4, abs=1e-10)


def test_adam_zero_lr_is_bit_identical():
    params = _params(x=[0.1, -0.7])
    before = params['x'].data.copy()
    params['x'].grad[...] = [5.0, -3.0]
    adam_step(params, lr=0.0)
    np.testing.assert_array_equal(params['x'].data, before)


def test_parameter_set_load_arrays_checks_shapes():
    params = _params(x=[1.0, 2.0])
    with pytest.raises(CheckpointIncompatibleError) as excinfo:
        params.load_arrays({'x': np.zeros(3)})
    assert "'x'" in str(excinfo.value)
    with pytest.raises(CheckpointIncompatibleError):
        params.load_arrays({})


def test_parameter_set_duplicate_name():
    params = _params(x=1.0)
    with pytest.raises(ContractViolationError):
        params.add('x', 2.0)


def test_parameter_set_copy_is_independent():
    params = _params(x=[1.0])
    clone = params.copy()
    clone['x'].data[0] = 5.0
    assert params['x'].data[0] == 1.0
