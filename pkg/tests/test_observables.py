import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bicoupling.dynamics import Coefficients, TimeGrid, drift, interaction, simulate_particles
from bicoupling.observables import (
    continuum_observable,
    law_observable,
    observable_distance,
    observable_metric,
    plain_observable,
    plain_observable_norep,
    pushforward_to_normal,
)
from bicoupling.systems import ContinuumSystem, FiniteSystem, discretize_lift
from bicoupling.torus import LAMBDA_MAX, AtomicMeasure, cell_centers, h_neg1_dist
from bicoupling.trees import EdgeSignature, OrientedTree, enumerate_trees, signatures

EDGE = OrientedTree(2, ((0, 1),))
ON, OFF = EdgeSignature((1,)), EdgeSignature((0,))


def random_system(rng, n, scale=1.0):
    return FiniteSystem(rng.uniform(-scale, scale, (n, n)), rng.random(n))


def atoms_dict(m, digits=12):
    m = m.merged()
    return {tuple(np.round(p, digits)): w for p, w in zip(m.positions, m.weights) if abs(w) > 1e-15}


def brute_observable(sys, t, s, distinct=False):
    n = sys.n
    pos, wts = [], []
    for l in itertools.product(range(n), repeat=t.v):
        if distinct and len(set(l)) < t.v:
            continue
        term = float(n) ** -t.v
        for (i, j), on in zip(t.edges, s.s):
            if on:
                term *= sys.w[l[i], l[j]]
        pos.append([sys.x[l[h]] for h in t.heads])
        wts.append(term)
    if not wts:
        return AtomicMeasure(np.zeros((0, len(t.heads))), np.zeros(0), len(t.heads))
    return AtomicMeasure(np.array(pos), np.array(wts), len(t.heads))


def tv_distance(a, b):
    return (a - b).merged().total_variation()


# ---------------------------------------------------------------------------
# plain observables


def test_single_edge_unweighted_is_empirical():
    s = random_system(np.random.default_rng(0), 6)
    obs = plain_observable(s, EDGE, OFF)
    assert tv_distance(obs.measure, s.empirical()) <= 1e-14


def test_two_agent_example():
    s = FiniteSystem([[0.0, 1.0], [1.0, 0.0]], [0.0, 0.5])
    got = atoms_dict(plain_observable(s, EDGE, ON).measure)
    assert got == pytest.approx({(0.0,): 0.25, (0.5,): 0.25})
    got_e = atoms_dict(plain_observable_norep(s, EDGE, ON).measure)
    assert got_e == pytest.approx({(0.0,): 0.25, (0.5,): 0.25})


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_contraction_matches_brute_force(seed, n):
    s = random_system(np.random.default_rng(seed), n)
    for t in enumerate_trees(4):
        for sig in signatures(t):
            a = plain_observable(s, t, sig).measure
            b = brute_observable(s, t, sig)
            diff = (a - b).merged(tol=1e-12)
            assert np.abs(diff.weights).max(initial=0.0) <= 1e-12


def test_unweighted_signature_factorizes():
    s = random_system(np.random.default_rng(1), 4)
    t = OrientedTree(4, ((0, 1), (0, 2), (3, 2)))
    obs = plain_observable(s, t, EdgeSignature((0, 0, 0)))
    x = s.x
    expected = AtomicMeasure(np.array(list(itertools.product(x, x))), np.full(16, 1 / 16), 2)
    assert tv_distance(obs.measure, expected) <= 1e-14


def test_head_cap():
    t = OrientedTree(5, ((0, 1), (0, 2), (0, 3), (0, 4)))
    with pytest.raises(ValueError):
        plain_observable(random_system(np.random.default_rng(0), 3), t, EdgeSignature((1, 1, 1, 1)))


def test_signature_length_checked():
    with pytest.raises(ValueError):
        plain_observable(random_system(np.random.default_rng(0), 3), EDGE, EdgeSignature((1, 1)))


# ---------------------------------------------------------------------------
# distinct indices


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 5))
def test_norep_matches_brute_force(seed, n):
    s = random_system(np.random.default_rng(seed), n)
    for t in enumerate_trees(4):
        for sig in signatures(t):
            diff = (plain_observable_norep(s, t, sig).measure - brute_observable(s, t, sig, distinct=True)).merged(tol=1e-12)
            assert np.abs(diff.weights).max(initial=0.0) <= 1e-12


def test_norep_single_agent_is_zero():
    s = FiniteSystem([[0.5]], [0.3])
    obs = plain_observable_norep(s, EDGE, ON)
    assert obs.total_mass() == 0.0


def remainder(n, v):
    return 1 - np.prod([(n - k + 1) / n for k in range(1, v + 1)])


@pytest.mark.parametrize("n", [3, 6, 9, 12])
def test_repetition_bounds(n):
    rng = np.random.default_rng(n)
    for _ in range(3):
        s = random_system(rng, n)
        for t in enumerate_trees(4):
            for sig in signatures(t):
                tau, tau_e = plain_observable(s, t, sig), plain_observable_norep(s, t, sig)
                r = remainder(n, t.v)
                tv = tv_distance(tau.measure, tau_e.measure)
                assert tv <= (1 + s.w_max) ** t.n_edges * r + 1e-12
                h = observable_distance(tau, tau_e)
                assert h <= (1 + s.w_max) ** t.n_edges * np.sqrt(LAMBDA_MAX) ** len(t.heads) * r + 1e-12


# ---------------------------------------------------------------------------
# law observables


def kuramoto(nu):
    return Coefficients(drift("sin_drift", 0.3), interaction("kuramoto", 1.0), nu)


def test_law_deterministic_equals_plain():
    s = random_system(np.random.default_rng(2), 5)
    tg = TimeGrid(0.01, 0.2)
    flow = simulate_particles(s, kuramoto(0.0), tg)
    direct = plain_observable(flow, EDGE, ON)
    for r in (1, 3):
        law = law_observable(s, kuramoto(0.0), tg, EDGE, ON, realizations=r, seed=4)
        assert observable_distance(law, direct) <= 1e-7
        assert law.variant == "tau_p"


def test_law_single_realization_is_one_sample():
    from bicoupling.systems import child_seed

    s = random_system(np.random.default_rng(3), 5)
    tg = TimeGrid(0.01, 0.2)
    law = law_observable(s, kuramoto(0.3), tg, EDGE, ON, realizations=1, seed=8)
    sample = plain_observable(simulate_particles(s, kuramoto(0.3), tg, child_seed(8, 0)), EDGE, ON)
    assert tv_distance(law.measure, sample.measure) <= 1e-14
    law_m = law_observable(s, kuramoto(0.3), tg, EDGE, ON, realizations=2, seed=8, distinct=True)
    assert law_m.variant == "tau_m"


@pytest.mark.slow
def test_law_monte_carlo_error_scaling():
    s = random_system(np.random.default_rng(5), 3)
    tg = TimeGrid(0.01, 0.2)
    c = kuramoto(0.5)
    rs = [8, 16, 32, 64, 128, 256, 512]
    errs = []
    for r in rs:
        masses = []
        for rep in range(40):
            law = law_observable(s, c, tg, EDGE, OFF, realizations=r, seed=1000 * r + rep)
            m = law.measure
            masses.append(float(m.weights[m.positions[:, 0] < 0.5].sum()))
        errs.append(np.std(masses))
    slope = np.polyfit(np.log(rs), np.log(errs), 1)[0]
    assert abs(slope + 0.5) <= 0.15


# ---------------------------------------------------------------------------
# continuum observables


def two_class(grid=64, W=((1.0, 0.5), (-0.5, 1.0))):
    x = cell_centers(grid)
    dens = np.vstack([1 + 0.5 * np.cos(2 * np.pi * x), 1 + 0.5 * np.sin(2 * np.pi * x)])
    return ContinuumSystem([0.5, 0.5], W, dens)


def test_continuum_scalar_class():
    x = cell_centers(32)
    f = 1 + 0.3 * np.cos(2 * np.pi * x)
    cont = ContinuumSystem([1.0], [[0.7]], f[None, :])
    obs = continuum_observable(cont, EDGE, ON)
    np.testing.assert_allclose(obs.components[0].weights, 0.7 * f / 32, atol=1e-15)


def test_continuum_unweighted_is_mixture_product():
    x = cell_centers(16)
    dens = np.vstack([1 + a * np.cos(2 * np.pi * (x - a)) for a in (0.1, 0.4, 0.7)])
    kappa = np.array([0.2, 0.3, 0.5])
    cont = ContinuumSystem(kappa, np.eye(3), dens)
    t = OrientedTree(3, ((0, 1), (2, 0)))
    obs = continuum_observable(cont, t, EdgeSignature((0, 0)))
    mix = kappa @ dens / 16
    np.testing.assert_allclose(obs.components[0].weights, np.outer(mix, mix), atol=1e-15)
    # against direct class-tuple summation
    direct = np.zeros((16, 16))
    for a, b, c in itertools.product(range(3), repeat=3):
        direct += kappa[a] * kappa[b] * kappa[c] * np.outer(dens[a], dens[b]) / 256
    np.testing.assert_allclose(obs.components[0].weights, direct, atol=1e-15)


def test_continuum_matches_lift_first_order():
    cont = two_class(grid=256)
    t = OrientedTree(3, ((0, 1), (1, 2)))
    for sig in signatures(t):
        ref = continuum_observable(cont, t, sig)
        errs = [observable_distance(plain_observable(discretize_lift(cont, m), t, sig), ref) for m in (8, 16, 32, 64)]
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all(ratios >= 1.6), (sig, errs)


# ---------------------------------------------------------------------------
# distances and pushforward


def test_distance_examples():
    s = random_system(np.random.default_rng(6), 4)
    o = plain_observable(s, EDGE, ON)
    assert observable_distance(o, o) == 0.0
    a = plain_observable(FiniteSystem([[1.0]], [0.0]), EDGE, OFF)
    b = plain_observable(FiniteSystem([[1.0]], [0.5]), EDGE, OFF)
    assert observable_distance(a, b) == pytest.approx(0.4949, abs=1e-3)


def test_probability_distance_bound():
    rng = np.random.default_rng(7)
    t = OrientedTree(3, ((0, 1), (0, 2)))
    for _ in range(10):
        a = plain_observable(random_system(rng, 6), t, EdgeSignature((0, 0)))
        b = plain_observable(random_system(rng, 9), t, EdgeSignature((0, 0)))
        assert observable_distance(a, b) <= 2 * np.sqrt(LAMBDA_MAX) ** a.arity


def test_pushforward():
    s = random_system(np.random.default_rng(8), 4)
    o = plain_observable(s, EDGE, ON)
    p = pushforward_to_normal(o)
    assert tv_distance(p.measure, o.measure) <= 1e-15
    star = OrientedTree(3, ((0, 2), (1, 2)))
    q = pushforward_to_normal(plain_observable(s, star, EdgeSignature((1, 1))))
    assert q.arity == 2
    assert np.all(q.measure.positions[:, 0] == q.measure.positions[:, 1])
    assert q.total_mass() == pytest.approx(plain_observable(s, star, EdgeSignature((1, 1))).total_mass(), abs=1e-15)


def test_observable_json():
    s = random_system(np.random.default_rng(9), 3)
    d = plain_observable(s, EDGE, ON).to_dict()
    assert d["tree"] == {"v": 2, "edges": [[0, 1]]}
    assert "atoms" in d


# ---------------------------------------------------------------------------
# metric


def test_metric_zero_on_equal_systems():
    s = random_system(np.random.default_rng(10), 12)
    assert observable_metric(s, s).value <= 1e-6


def test_metric_relabeling_invariance():
    rng = np.random.default_rng(11)
    s = random_system(rng, 15)
    # sums are permutation-symmetric; sqrt of a round-off level square is what remains
    assert observable_metric(s, s.permuted(rng.permutation(15))).value <= 1e-6


def test_metric_rotation_continuity():
    rng = np.random.default_rng(12)
    s = random_system(rng, 10)
    vals = [observable_metric(s, s.with_states(s.x + d), 3).value for d in (0.2, 0.1, 0.05, 0.025)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_metric_terms_bounded():
    rng = np.random.default_rng(13)
    for _ in range(5):
        a, b = random_system(rng, 7), random_system(rng, 9)
        res = observable_metric(a, b, 4, w_max=1.0)
        for term in res.terms:
            assert term.weighted <= 2.0 ** -term.tree.n_edges


def test_metric_network_matches_materialized_observables():
    rng = np.random.default_rng(14)
    a, b = random_system(rng, 6), random_system(rng, 8)
    res = observable_metric(a, b, 4)
    for term in res.terms:
        direct = observable_distance(plain_observable(a, term.tree, term.signature), plain_observable(b, term.tree, term.signature))
        assert term.distance == pytest.approx(direct, abs=1e-7)


def test_metric_against_continuum():
    cont = two_class(grid=64)
    s = discretize_lift(cont, 10)
    res = observable_metric(s, cont, 3)
    for term in res.terms:
        direct = observable_distance(plain_observable(s, term.tree, term.signature), continuum_observable(cont, term.tree, term.signature))
        assert term.distance == pytest.approx(direct, abs=1e-7)


def test_metric_grows_with_cap():
    rng = np.random.default_rng(15)
    a, b = random_system(rng, 6), random_system(rng, 6)
    vals = [observable_metric(a, b, cap, w_max=1.0).value for cap in (3, 4, 5)]
    assert vals[0] <= vals[1] <= vals[2]


def test_metric_csv(tmp_path):
    rng = np.random.default_rng(16)
    res = observable_metric(random_system(rng, 4), random_system(rng, 5), 3)
    res.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("tree,signature")
    assert len(lines) == 1 + len(res.terms)
    assert isinstance(res.saturated, bool)


def test_atomic_helper_distance_consistency():
    a, b = AtomicMeasure.dirac(0.0), AtomicMeasure.dirac(0.5)
    oa = plain_observable(FiniteSystem([[1.0]], [0.0]), EDGE, OFF)
    ob = plain_observable(FiniteSystem([[1.0]], [0.5]), EDGE, OFF)
    assert observable_distance(oa, ob) == pytest.approx(h_neg1_dist(a, b), abs=1e-12)
