import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ponderbench.adaptive import (
    ActConfig,
    HaltingRecord,
    RepeatConfig,
    act_rollout,
    act_schedule,
    augment_input,
    mean_repetitions,
    ponder_loss,
    repeat_expand,
    repeat_rollout,
)
from ponderbench.autodiff import ParamStore, Tensor, add, backward, grad_check, total
from ponderbench.cells import CellState, init_linear, init_lstm, init_rnn, lstm_step, readout, rnn_step, zero_state


def counter_cell(params, s, x):
    return CellState(add(s.h, 1.0))


def test_augment_input():
    np.testing.assert_array_equal(augment_input(Tensor([5.0, 6.0]), 1).value, [1, 5, 6])
    np.testing.assert_array_equal(augment_input(Tensor([5.0, 6.0]), 3).value, [0, 5, 6])
    x = np.random.default_rng(0).normal(size=(4, 7))
    out = augment_input(Tensor(x), 2).value
    assert out.shape == (4, 8)
    np.testing.assert_array_equal(out[:, 0], 0.0)
    with pytest.raises(ValueError):
        augment_input(Tensor([1.0]), 0)


def test_repeat_expand_worked_example():
    x1, x2 = Tensor([0.2, 0.3]), Tensor([0.7, 0.1])
    out = [t.value.tolist() for t in repeat_expand([x1, x2], 3)]
    assert out == [[1, 0.2, 0.3], [0, 0.2, 0.3], [0, 0.2, 0.3], [1, 0.7, 0.1], [0, 0.7, 0.1], [0, 0.7, 0.1]]


@given(T=st.integers(1, 6), rho=st.integers(1, 8))
def test_repeat_expand_length_and_flags(T, rho):
    seq = [Tensor(np.full(2, float(t))) for t in range(T)]
    out = repeat_expand(seq, rho)
    assert len(out) == T * rho
    flags = [t.value[0] for t in out]
    assert flags == ([1.0] + [0.0] * (rho - 1)) * T


def test_repeat_rho_validation():
    with pytest.raises(ValueError):
        RepeatConfig(0)
    with pytest.raises(ValueError):
        repeat_expand([Tensor([1.0])], 0)


def test_repeat_rollout_counter_cell():
    emitted = repeat_rollout(counter_cell, None, [Tensor([0.0]), Tensor([0.0])], 3, CellState(Tensor([0.0])))
    assert [e.h.item() for e in emitted] == [3.0, 6.0]


def test_repeat_rollout_rho1_is_plain_rollout():
    rng = np.random.default_rng(4)
    ps = ParamStore()
    p = init_rnn(ps, "c", 4, 5, rng)
    seq = [Tensor(rng.normal(size=3)) for _ in range(4)]
    emitted = repeat_rollout(rnn_step, p, seq, 1)
    s = zero_state(5, False)
    for x, e in zip(seq, emitted):
        s = rnn_step(p, s, augment_input(x, 1))
        np.testing.assert_array_equal(s.h.value, e.h.value)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), rho=st.integers(1, 8), T=st.integers(1, 5), lstm=st.booleans())
def test_repeat_rollout_equals_expanded_bare_run(seed, rho, T, lstm):
    rng = np.random.default_rng(seed)
    ps = ParamStore()
    p = (init_lstm if lstm else init_rnn)(ps, "c", 4, 5, rng)
    step = lstm_step if lstm else rnn_step
    seq = [Tensor(rng.normal(size=3)) for _ in range(T)]
    emitted = repeat_rollout(step, p, seq, rho)
    s, bare = zero_state(5, lstm), []
    for x in repeat_expand(seq, rho):
        s = step(p, s, x)
        bare.append(s)
    for e, b in zip(emitted, bare[rho - 1::rho]):
        assert np.array_equal(e.h.value, b.h.value)


# ---------------------------------------------------------------------------
# halting schedule


def test_act_schedule_two_steps():
    r = act_schedule([0.9, 0.5], 0.01)
    assert r.N == 2
    assert r.R == pytest.approx(0.1)
    assert r.p == pytest.approx([0.9, 0.1])
    assert r.ponder == pytest.approx(2.1)


def test_act_schedule_immediate_halt():
    r = act_schedule([0.995], 0.01)
    assert (r.N, r.R, r.p, r.ponder) == (1, 1.0, [1.0], 2.0)


def test_act_schedule_cap():
    r = act_schedule([0.001] * 10, 0.01, max_steps=5)
    assert r.N == 5
    assert r.R == pytest.approx(0.996)
    assert r.ponder == pytest.approx(5.996)


def test_act_schedule_runs_out():
    with pytest.raises(ValueError):
        act_schedule([0.1, 0.1], 0.01, max_steps=10)


@given(st.lists(st.floats(1e-6, 1 - 1e-6), min_size=1, max_size=60), st.floats(1e-3, 0.5), st.integers(1, 60))
def test_act_schedule_invariants(h, eps, cap):
    h = h + [0.999999] * 60
    r = act_schedule(h, eps, cap)
    assert 1 <= r.N <= cap
    assert abs(sum(r.p) - 1.0) < 1e-12
    assert r.p[-1] == r.R
    assert r.p[:-1] == h[:r.N - 1]
    assert r.ponder == r.N + r.R
    assert 0.0 <= r.R <= 1.0


def test_act_config_validation():
    for kwargs in ({"tau": -1.0}, {"epsilon": 0.0}, {"epsilon": 1.0}, {"max_steps": 0}):
        with pytest.raises(ValueError):
            ActConfig(**kwargs)


# ---------------------------------------------------------------------------
# adaptive rollout


def _act_setup(seed=0, lstm=False, halt_bias=0.0, I=3, H=4):
    rng = np.random.default_rng(seed)
    ps = ParamStore()
    p = (init_lstm if lstm else init_rnn)(ps, "cell", I + 1, H, rng)
    head = init_linear(ps, "head", H, 1, rng)
    halt = init_linear(ps, "halt", H, 1, rng, bias=halt_bias)
    return rng, ps, p, head, halt, (lstm_step if lstm else rnn_step)


@pytest.mark.parametrize("lstm", [False, True])
def test_act_rollout_matches_scalar_schedule(lstm):
    rng, ps, p, head, halt, step = _act_setup(1, lstm, halt_bias=-1.5)
    cfg = ActConfig(0.01, 0.01, 20)
    X = rng.normal(size=(2, 6, 3))
    states, traces = act_rollout(step, p, halt, [Tensor(x) for x in X], cfg)
    # replay each sequence alone, halting with the reference schedule
    for b in range(6):
        s = zero_state(4, lstm)
        for t in range(2):
            inter, hs = [], []
            sn = s
            for n in range(1, cfg.max_steps + 1):
                sn = step(p, sn, augment_input(Tensor(X[t, b]), n))
                inter.append(sn)
                hs.append(1 / (1 + np.exp(-(halt.W.value @ sn.h.value + halt.b.value)[0])))
                if sum(hs) >= 1 - cfg.epsilon or n == cfg.max_steps:
                    break
            rec = act_schedule(hs, cfg.epsilon, cfg.max_steps)
            got = traces[t].records()[b]
            assert got.N == rec.N
            np.testing.assert_allclose(got.p, rec.p, rtol=1e-12, atol=1e-14)
            h = sum(w * i.h.value for w, i in zip(rec.p, inter))
            np.testing.assert_allclose(states[t].h.value[b], h, rtol=1e-10, atol=1e-12)
            s = CellState(Tensor(h), Tensor(sum(w * i.c.value for w, i in zip(rec.p, inter))) if lstm else None)


def test_act_rollout_records_are_consistent():
    rng, ps, p, head, halt, step = _act_setup(2, halt_bias=-2.0)
    _, traces = act_rollout(step, p, halt, [Tensor(rng.normal(size=(16, 3))) for _ in range(3)], ActConfig())
    for tr in traces:
        for r in tr.records():
            assert abs(sum(r.p) - 1.0) < 1e-12
            assert r.p[-1] == r.R
            assert r.ponder == r.N + r.R
            assert 1 <= r.N <= 50


def test_act_rollout_emits_convex_combination():
    rng, ps, p, head, halt, step = _act_setup(3, halt_bias=-2.0)
    x = Tensor(rng.normal(size=3))
    states, traces = act_rollout(step, p, halt, [x], ActConfig(max_steps=10))
    N = traces[0].N[0]
    s, inter = zero_state(4, False), []
    for n in range(1, N + 1):
        s = step(p, s, augment_input(x, n))
        inter.append(s.h.value)
    inter = np.array(inter)
    h = states[0].h.value
    assert N > 1
    assert np.all(h >= inter.min(axis=0) - 1e-12) and np.all(h <= inter.max(axis=0) + 1e-12)


def test_act_rollout_saturated_halting_is_single_step():
    rng, ps, p, head, halt, step = _act_setup(4, halt_bias=50.0)
    seq = [Tensor(rng.normal(size=(8, 3))) for _ in range(3)]
    states, traces = act_rollout(step, p, halt, seq, ActConfig())
    assert mean_repetitions(traces) == 1.0
    plain = repeat_rollout(step, p, seq, 1)
    for a, b in zip(states, plain):
        np.testing.assert_array_equal(a.h.value, b.h.value)


@pytest.mark.parametrize("lstm", [False, True])
def test_act_rollout_grad_check_with_ponder(lstm):
    rng, ps, p, head, halt, step = _act_setup(5, lstm, halt_bias=-0.5)
    seq = [Tensor(rng.normal(size=3)) for _ in range(2)]
    cfg = ActConfig(tau=0.1)

    def f():
        states, traces = act_rollout(step, p, halt, seq, cfg)
        return add(total(readout(head, states[-1])), ponder_loss(traces, cfg.tau))

    _, traces = act_rollout(step, p, halt, seq, cfg)
    assert max(t.N[0] for t in traces) > 1
    assert grad_check(f, ps) < 1e-4


def test_ponder_loss_examples():
    assert ponder_loss([HaltingRecord(2, [0.9, 0.5], [0.9, 0.1], 0.1, 2.1)], 0.0).item() == 0.0
    assert ponder_loss([HaltingRecord(2, [0.9, 0.5], [0.9, 0.1], 0.1, 2.1)], 0.01).item() == pytest.approx(0.021)


def test_ponder_loss_gradient_reaches_halting_head():
    rng, ps, p, head, halt, step = _act_setup(6, halt_bias=-1.0)
    _, traces = act_rollout(step, p, halt, [Tensor(rng.normal(size=(4, 3))) for _ in range(2)], ActConfig())
    assert all(np.all(t.N > 1) for t in traces)
    loss = ponder_loss(traces, 0.01)
    backward(loss, ps)
    assert np.abs(ps["halt.b"].grad).max() > 0
    assert np.abs(ps["halt.W"].grad).max() > 0
    # batch mean of per-sequence sums
    want = 0.01 * np.mean(sum(t.N + t.R for t in traces))
    assert loss.item() == pytest.approx(want)


def test_mean_repetitions():
    assert mean_repetitions([1, 1, 1]) == 1.0
    assert mean_repetitions([2, 3]) == 2.5
    with pytest.raises(ValueError):
        mean_repetitions([])
