from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from collision_cml import lattice as lt
from collision_cml.local_map import decimal_map, doubling_map
from collision_cml.stats import collision_rate
from oracles import brute_phi, brute_phi_decoupled

SPEC1 = lt.CollisionSpec(0.05, (0.2, 0.7))
RING3 = lt.LatticeGeometry.chain(3)


def test_uncoupled_step_examples():
    np.testing.assert_allclose(lt.uncoupled_step([0.1, 0.2, 0.7], doubling_map()), [0.2, 0.4, 0.4], atol=1e-15)
    assert np.all(lt.uncoupled_step(np.zeros(5), decimal_map()) == 0)
    y = lt.uncoupled_step(np.full((3, 3), 0.11), decimal_map())
    np.testing.assert_allclose(y, 0.1, atol=1e-14)


def test_no_collisions_is_identity():
    x = np.array([0.1, 0.5, 0.9])
    assert len(lt.detect_collision_pairs(x, SPEC1, RING3)) == 0
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, RING3), x)
    np.testing.assert_array_equal(lt.decoupled_coupling_apply(x, SPEC1, RING3, 1), x)


def test_forced_swap():
    x = np.array([0.22, 0.72, 0.5])
    pairs = lt.detect_collision_pairs(x, SPEC1, RING3)
    assert list(pairs) == [((0,), "+1")]
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, RING3), [0.72, 0.22, 0.5])


def test_decoupling_at_collision_site_is_identity():
    x = np.array([0.22, 0.72, 0.5])
    np.testing.assert_array_equal(lt.decoupled_coupling_apply(x, SPEC1, RING3, 0), x)


def test_decoupling_far_from_collision_matches_coupling():
    g = lt.LatticeGeometry.chain(5)
    x = np.array([0.5, 0.9, 0.21, 0.73, 0.4])
    out = lt.coupling_apply(x, SPEC1, g)
    np.testing.assert_array_equal(out, [0.5, 0.9, 0.73, 0.21, 0.4])
    np.testing.assert_array_equal(lt.decoupled_coupling_apply(x, SPEC1, g, 0), out)
    np.testing.assert_array_equal(out, brute_phi(x, SPEC1.lows, SPEC1.epsilon))


def test_wraparound_pair():
    x = np.array([0.72, 0.5, 0.22])
    # site 2 sits in A_{+1}, its +1 neighbour is site 0 in A_{-1}
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, RING3), [0.22, 0.5, 0.72])
    assert list(lt.detect_collision_pairs(x, SPEC1, RING3)) == [((2,), "+1")]


def test_two_dimensional_disjoint_pairs():
    spec = lt.CollisionSpec.default(0.05, 2)
    g = lt.LatticeGeometry(2, (3, 3))
    lo = spec.lows  # +1, -1, +2, -2
    x = np.full((3, 3), 0.95)
    x[0, 0], x[1, 0] = lo[0] + 0.01, lo[1] + 0.01  # pair along +e1
    x[2, 1], x[2, 2] = lo[2] + 0.01, lo[3] + 0.01  # pair along +e2
    out = lt.coupling_apply(x, spec, g)
    assert out[0, 0] == x[1, 0] and out[1, 0] == x[0, 0]
    assert out[2, 1] == x[2, 2] and out[2, 2] == x[2, 1]
    np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(x, axis=None))
    np.testing.assert_array_equal(out, brute_phi(x, lo, 0.05))
    assert len(lt.detect_collision_pairs(x, spec, g)) == 2


def test_step_composes():
    x = np.array([0.022, 0.072, 0.5])
    np.testing.assert_allclose(lt.step(x, decimal_map(), SPEC1, RING3), [0.72, 0.22, 0.0], atol=1e-14)


def test_open_chain_has_no_wraparound():
    g = lt.LatticeGeometry.chain(3, "open")
    x = np.array([0.72, 0.5, 0.22])
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, g), x)


def test_two_site_ring_pairs_once():
    g = lt.LatticeGeometry.chain(2)
    assert g.boundary == "ring2"
    x = np.array([0.22, 0.72])
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, g), [0.72, 0.22])
    x = np.array([0.72, 0.22])
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, g), [0.22, 0.72])


def test_geometry_validation():
    with pytest.raises(ValueError):
        lt.LatticeGeometry(1, (2,))
    with pytest.raises(ValueError):
        lt.LatticeGeometry(2, (4,))
    with pytest.raises(ValueError):
        lt.LatticeGeometry(1, (4,), "mobius")
    g = lt.LatticeGeometry(2, (3, 4))
    assert g.n_sites == 12 and g.n_directions == 4
    for i in range(g.n_sites):
        for m in range(4):
            assert g.neighbors[g.neighbors[i, m], m ^ 1] == i


def test_spec_validation():
    with pytest.raises(ValueError):
        lt.CollisionSpec(0.6, (0.2, 0.7))
    with pytest.raises(ValueError):
        lt.CollisionSpec(-0.1, (0.2, 0.7))
    with pytest.raises(ValueError):
        lt.CollisionSpec(0.05, (0.0, 0.7))
    s = lt.CollisionSpec.default(0.05)
    assert s.gap == pytest.approx(0.45)
    assert s.intervals == {"+1": (0.2, 0.25), "-1": (0.7, 0.75)}
    assert lt.CollisionSpec.default(0.01, 2).gap >= 0.18


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        lt.coupling_apply(np.full((3, 3), 0.5), SPEC1, lt.LatticeGeometry(2, (3, 3)))


def test_state_range_checked():
    with pytest.raises(ValueError):
        lt.coupling_apply([0.2, 1.2, 0.3], SPEC1, RING3)


def test_orbit_avoiding_intervals_matches_uncoupled():
    # 1/3 <-> 2/3 under doubling, never inside (0.2, 0.25) or (0.7, 0.75)
    t = doubling_map()
    x0 = np.array([1 / 3, 2 / 3, 1 / 3, 2 / 3])
    g = lt.LatticeGeometry.chain(4)
    summary = lt.run_trajectory(x0, t, SPEC1, g, 50)
    y = x0.copy()
    for _ in range(50):
        y = lt.uncoupled_step(y, t)
    np.testing.assert_array_equal(summary.final_state, y)
    assert summary.total_collisions == 0


def test_zero_steps_and_fixed_point():
    g = lt.LatticeGeometry.chain(5)
    x0 = np.random.default_rng(0).random(5)
    s = lt.run_trajectory(x0, decimal_map(), SPEC1, g, 0)
    np.testing.assert_array_equal(s.final_state, x0)
    assert s.total_collisions == 0
    s = lt.run_trajectory(np.zeros(5), decimal_map(), SPEC1, g, 1000)
    assert s.total_collisions == 0 and np.all(s.final_state == 0)


def test_observers_see_every_step():
    g = lt.LatticeGeometry.chain(4)
    seen = []
    lt.run_trajectory(np.array([0.022, 0.072, 0.5, 0.3]), decimal_map(), SPEC1, g, 3,
                      observers=[lambda t, s, p: seen.append((t, len(p)))])
    assert [t for t, _ in seen] == [1, 2, 3]
    assert seen[0][1] == 1


def test_failing_observer_reports_step():
    def bad(t, s, p):
        if t == 2:
            raise ValueError("boom")

    with pytest.raises(RuntimeError, match="step 2"):
        lt.run_trajectory(np.full(3, 0.3), decimal_map(), SPEC1, RING3, 5, observers=[bad])


def test_exact_trajectory_matches_step_loop():
    g = lt.LatticeGeometry.chain(6)
    x = np.random.default_rng(3).random(6)
    t = decimal_map()
    s = lt.run_trajectory(x, t, SPEC1, g, 10)
    for _ in range(10):
        x = lt.step(x, t, SPEC1, g)
    np.testing.assert_array_equal(s.final_state, x)


def test_simulation_is_seed_deterministic():
    g = lt.LatticeGeometry.chain(16)
    a = lt.Simulation(decimal_map(), SPEC1, g, 500, seed=7, burn_in=10, chunk_size=64).states()
    b = lt.Simulation(decimal_map(), SPEC1, g, 500, seed=7, burn_in=10, chunk_size=64).states()
    c = lt.Simulation(decimal_map(), SPEC1, g, 500, seed=8, burn_in=10, chunk_size=64).states()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_dither_prevents_collapse():
    g = lt.LatticeGeometry.chain(8)
    plain = lt.Simulation(decimal_map(), None, g, 200, seed=1, dither=False).states()
    assert np.all(plain[-1] == 0)
    dith = lt.Simulation(decimal_map(), None, g, 200, seed=1).states()
    assert np.all(dith[-50:].std(axis=0) > 0.1)


def test_collision_rate_close_to_eps_squared():
    eps = 0.05
    g = lt.LatticeGeometry.chain(64)
    sim = lt.Simulation(decimal_map(), lt.CollisionSpec.default(eps), g, 100_000, seed=2024, burn_in=100)
    p, se = collision_rate(sim)
    assert abs(p - eps ** 2) < 3 * se


states1 = arrays(np.float64, st.integers(3, 12), elements=st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(x=states1)
def test_phi_matches_definition(x):
    g = lt.LatticeGeometry.chain(len(x))
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, g), brute_phi(x, SPEC1.lows, 0.05))


@settings(max_examples=200, deadline=None)
@given(data=st.data(), n=st.integers(3, 10))
def test_decoupled_matches_definition_on_dense_collisions(data, n):
    # draw from the collision intervals so that many pairs form
    choices = st.one_of(st.floats(0.2, 0.25), st.floats(0.7, 0.75), st.floats(0, 1))
    x = np.array(data.draw(st.lists(choices, min_size=n, max_size=n)))
    i = data.draw(st.integers(0, n - 1))
    g = lt.LatticeGeometry.chain(n)
    np.testing.assert_array_equal(lt.coupling_apply(x, SPEC1, g), brute_phi(x, SPEC1.lows, 0.05))
    out = lt.decoupled_coupling_apply(x, SPEC1, g, i)
    np.testing.assert_array_equal(out, brute_phi_decoupled(x, SPEC1.lows, 0.05, (i,)))
    assert out[i] == x[i]
    np.testing.assert_array_equal(np.sort(out), np.sort(x))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), sides=st.tuples(st.integers(3, 5), st.integers(3, 5)))
def test_two_dimensional_matches_definition(seed, sides):
    rng = np.random.default_rng(seed)
    spec = lt.CollisionSpec.default(0.08, 2)
    g = lt.LatticeGeometry(2, sides)
    x = lt.adversarial_states(spec, g, rng, 1)[0]
    x[rng.random(sides) < 0.2] = 0.95
    out = lt.coupling_apply(x, spec, g)
    np.testing.assert_array_equal(out, brute_phi(x, spec.lows, 0.08))
    site = (int(rng.integers(sides[0])), int(rng.integers(sides[1])))
    np.testing.assert_array_equal(lt.decoupled_coupling_apply(x, spec, g, site),
                                  brute_phi_decoupled(x, spec.lows, 0.08, site))
