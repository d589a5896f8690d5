import numpy as np
import pytest

from coevolve.events import Event
from coevolve.graph import LAPSE_EPS, NumericalError, backward, build_window_graph
from coevolve.state import DynamicState, ModelParams, OutOfOrderEvent, apply_event

from oracles import brute_force_nll, central_difference, random_events, random_params, random_state


def all_dims(m, n):
    return [(u, i) for u in range(m) for i in range(n)]


def test_node_counts_and_wiring():
    p = ModelParams.zeros(2)
    events = [Event(0, 0, 1.0), Event(1, 0, 2.0), Event(0, 1, 3.0)]
    g = build_window_graph(events, DynamicState.initial(2, 2, 2), p)
    assert g.count("log_intensity") == 3
    assert g.count("user_update") == 3 and g.count("item_update") == 3
    # 2 users + 2 items enter once each
    assert g.count("entry") == 4
    # second event's item update reads the item node written by the first
    first_item = g.update_nodes("item_update")[0]
    second_item = g.update_nodes("item_update")[1]
    assert g.inputs_of(second_item)[0] == first_item


def test_exit_state_matches_replay():
    rng = np.random.default_rng(0)
    p = random_params(rng, 3, d=2, scale=2.0)
    entry = random_state(rng, 3, 4, 3)
    events = random_events(rng, 3, 4, 12, d=2, t0=1.0, t1=5.0)
    ref = entry.copy()
    for e in events:
        apply_event(ref, p, e)
    out = build_window_graph(events, entry, p).exit_state()
    assert np.array_equal(out.f, ref.f) and np.array_equal(out.g, ref.g)
    assert np.array_equal(out.last_user_time, ref.last_user_time)


def test_loss_matches_oracle_with_weights():
    rng = np.random.default_rng(1)
    m, n, k = 3, 3, 3
    p = random_params(rng, k, scale=1.5)
    entry = random_state(rng, m, n, k)
    events = random_events(rng, m, n, 8, t0=1.0, t1=4.0)
    dims = all_dims(m, n)
    weights = rng.uniform(0.5, 2.0, len(dims)).tolist()
    g = build_window_graph(events, entry, p, dims, weights)
    ev, surv = brute_force_nll(events, p, m, n, g.span, entry=entry, dims=dims, weights=weights)
    assert g.event_term == pytest.approx(ev, rel=1e-12)
    assert g.survival_term == pytest.approx(surv, rel=1e-12)


def test_default_span_tiles_from_frontier():
    entry = DynamicState.initial(1, 1, 2)
    entry.last_user_time[0] = 2.0
    g = build_window_graph([Event(0, 0, 5.0)], entry, ModelParams.zeros(2))
    assert g.span == (2.0, 5.0)
    with pytest.raises(ValueError):
        build_window_graph([Event(0, 0, 5.0)], entry, ModelParams.zeros(2), span=(1.0, 5.0))


def test_degenerate_lapse_uses_floor():
    events = [Event(0, 0, 1.0), Event(0, 0, 1.0)]
    g = build_window_graph(events, DynamicState.initial(1, 1, 2), ModelParams.zeros(2))
    assert g.degenerate_events == 1
    assert g.event_term == pytest.approx(-np.log(1.0) - np.log(LAPSE_EPS))


def test_out_of_order_rejected():
    with pytest.raises(OutOfOrderEvent):
        build_window_graph([Event(0, 0, 2.0), Event(0, 0, 1.0)], DynamicState.initial(1, 1, 2),
                           ModelParams.zeros(2))


def test_duplicate_terminal_doubles_gradient():
    rng = np.random.default_rng(2)
    p = random_params(rng, 2, scale=1.0)
    events = random_events(rng, 2, 2, 4, t0=1.0, t1=3.0)
    entry = random_state(rng, 2, 2, 2)
    g1 = build_window_graph(events, entry, p, [(1, 1), (0, 1)])
    g2 = build_window_graph(events, entry, p, [(1, 1), (0, 1)])
    for t in range(g2.n_terminals):
        g2.duplicate_terminal(t)
    loss1, a = backward(g1)
    loss2, b = backward(g2)
    assert loss2 == pytest.approx(2 * loss1, rel=1e-12)
    assert np.allclose(b.flatten(), 2 * a.flatten(), rtol=1e-12, atol=0)


def test_gradient_finite_difference_small():
    rng = np.random.default_rng(3)
    for act in ("tanh", "sigmoid"):
        p = random_params(rng, 3, d=2, scale=1.0, activation=act)
        entry = random_state(rng, 2, 3, 3)
        events = random_events(rng, 2, 3, 6, d=2, t0=1.0, t1=3.0)
        dims = all_dims(2, 3)

        def loss(flat):
            return build_window_graph(events, entry, p.with_flat(flat), dims).loss

        _, grads = backward(build_window_graph(events, entry, p, dims))
        fd = central_difference(loss, p.flatten())
        err = np.abs(grads.flatten() - fd) / np.maximum(np.abs(fd), 1e-6)
        assert err.max() < 1e-5


def test_clamped_terminals_have_no_gradient():
    p = ModelParams.zeros(2)
    entry = DynamicState(np.full((1, 2), 10.0), np.full((1, 2), 10.0), np.zeros(1), np.zeros(1))
    g = build_window_graph([Event(0, 0, 1.0)], entry, p)
    assert g.clamp_events == 1
    _, grads = backward(g)
    assert grads.norm() == 0.0


def test_numerical_error_reports_node():
    entry = DynamicState.initial(1, 1, 2)
    g = build_window_graph([Event(0, 0, 1e200)], entry, ModelParams.zeros(2), [(0, 0)])
    with pytest.raises(NumericalError) as info:
        backward(g)
    assert info.value.node_kind == "survival"


def test_chained_updates_are_differentiated_through():
    # perturbing the first event's context moves the second event's log-intensity
    rng = np.random.default_rng(4)
    p = random_params(rng, 2, d=1, scale=2.0)
    entry = random_state(rng, 1, 2, 2, tmax=0.5)

    def second_term(c):
        g = build_window_graph([Event(0, 0, 1.0, (c,)), Event(0, 1, 2.0, (0.0,))], entry, p)
        return g._terminals()[8][1]

    assert second_term(0.0) != second_term(0.5)
    g = build_window_graph([Event(0, 0, 1.0), Event(0, 1, 2.0)], entry, random_params(rng, 2))
    first, second = g.update_nodes("user_update")
    assert g.inputs_of(second)[0] == first


def test_zero_model_w3_gradient_needs_prior_item_event():
    p = ModelParams.zeros(2, activation="sigmoid")
    # (0, 0) at t=1 feeds g_0 into f_0 through W3; (0, 1) at t=2 then reads f_0
    tail = [Event(0, 0, 1.0), Event(1, 1, 1.5), Event(0, 1, 2.0)]
    _, cold = backward(build_window_graph(tail, DynamicState.initial(2, 2, 2), p))
    assert not np.any(cold["W3"])
    # with an earlier event on item 0, g_0 is an update node holding sigma(0) = 0.5
    _, warm = backward(build_window_graph([Event(1, 0, 0.5)] + tail, DynamicState.initial(2, 2, 2), p))
    assert np.all(warm["W3"] != 0)
    # single event: both embeddings are window constants, nothing reaches the parameters
    _, single = backward(build_window_graph([Event(0, 0, 1.0)], DynamicState.initial(1, 1, 2), p))
    assert single.norm() == 0.0
