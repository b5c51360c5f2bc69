import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bicoupling.torus import (
    LAMBDA_MAX,
    LAMBDA_MIN,
    AtomicMeasure,
    GridDensity,
    bin_atoms,
    cell_centers,
    h_neg1_dist,
    h_neg1_inner,
    h_neg1_tensor_inner,
    h_neg_s_norm_grid,
    kernel_atoms_cells,
    kernel_cells_cells,
    lambda1,
    lambda_extrema,
    lambda_kernel,
    lambda_s_grid,
    torus_dist,
    wrap,
)

# closed forms evaluated without the library
E = np.e
ORACLE_MAX = 0.5 + 1.0 / (E - 1.0)
ORACLE_MIN = np.exp(-0.5) / (1.0 - np.exp(-1.0))

points = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


def test_lambda_at_zero_matches_closed_form():
    assert lambda1(0.0, 40) == pytest.approx(1.0819767069, abs=1e-9)
    assert lambda1(0.0, 40) == pytest.approx(ORACLE_MAX, abs=1e-14)


def test_lambda_at_half_matches_closed_form():
    assert lambda1(0.5, 40) == pytest.approx(ORACLE_MIN, abs=1e-14)
    assert LAMBDA_MIN == pytest.approx(ORACLE_MIN, abs=1e-15)


def test_lambda_symmetry():
    assert lambda1(0.25) == pytest.approx(lambda1(0.75), abs=1e-15)


def test_lambda_extrema_and_dirac_norm():
    c = lambda_extrema(40)
    assert c.lambda_max == pytest.approx(ORACLE_MAX, abs=1e-12)
    assert c.lambda_min == pytest.approx(ORACLE_MIN, abs=1e-12)
    assert c.dirac_norm == pytest.approx(1.0401811, abs=1e-6)
    for trunc in (10, 20, 80):
        c = lambda_extrema(trunc)
        assert c.lambda_min < c.lambda_max


def test_truncation_floor():
    with pytest.raises(ValueError):
        lambda1(0.1, 5)


@given(points)
def test_series_matches_closed_form(x):
    assert lambda1(x, 40) == pytest.approx(float(lambda_kernel(x)), abs=1e-13)


@given(points)
def test_lambda_range(x):
    v = float(lambda_kernel(x))
    assert LAMBDA_MIN - 1e-15 <= v <= LAMBDA_MAX + 1e-15


@given(points, points)
def test_torus_dist_properties(x, y):
    d = float(torus_dist(x, y))
    assert 0.0 <= d <= 0.5
    assert d == pytest.approx(float(torus_dist(y, x)), abs=1e-15)
    assert d == pytest.approx(float(torus_dist(x + 1.0, y)), abs=1e-12)


def test_wrap_is_half_open():
    assert float(wrap(-1e-18)) == 0.0
    assert float(wrap(1.0)) == 0.0
    assert float(wrap(2.25)) == pytest.approx(0.25)


def test_lipschitz_sandwich():
    rng = np.random.default_rng(7)
    x = rng.random(10_000)
    d = torus_dist(x, 0.0)
    drop = LAMBDA_MAX - lambda_kernel(x)
    assert np.all(2 * (LAMBDA_MAX - LAMBDA_MIN) * d <= drop + 1e-15)
    assert np.all(drop <= LAMBDA_MAX * d + 1e-15)


# ---------------------------------------------------------------------------
# Fourier-truncated kernel


def test_lambda_s_grid_matches_series():
    g = lambda_s_grid(1.0, 256, 512)
    nodes = np.arange(256) / 256
    # truncation bound 1/(2 pi^2 M) is about 1e-4 at M = 512
    assert np.max(np.abs(g.values - lambda1(nodes))) <= 1 / (2 * np.pi**2 * 512)


@pytest.mark.slow
def test_lambda_s_grid_reaches_1e6_with_enough_modes():
    g = lambda_s_grid(1.0, 256, 65536)
    assert np.max(np.abs(g.values - lambda1(np.arange(256) / 256))) <= 1e-6


@pytest.mark.parametrize("grid", [16, 64, 256])
def test_lambda_s_grid_peak_at_zero(grid):
    g = lambda_s_grid(1.0, grid, grid)
    assert int(np.argmax(g.values)) == 0


def test_lambda_s_grid_integral_is_one():
    g = lambda_s_grid(2.0, 256, 512)
    assert g.total_mass() == pytest.approx(1.0, abs=1e-10)


def test_lambda_s_grid_rejects_bad_inputs():
    with pytest.raises(ValueError):
        lambda_s_grid(0.25, 64, 64)
    with pytest.raises(ValueError):
        lambda_s_grid(1.0, 8, 64)
    with pytest.raises(ValueError):
        lambda_s_grid(1.0, 64, 10)


# ---------------------------------------------------------------------------
# atomic inner products


def test_dirac_self_inner():
    a = AtomicMeasure.dirac(0.3)
    assert h_neg1_tensor_inner(a, a) == pytest.approx(1.0819767, abs=1e-7)


def test_dirac_self_inner_arity_two():
    a = AtomicMeasure.dirac(0.1, 0.2)
    assert h_neg1_tensor_inner(a, a) == pytest.approx(ORACLE_MAX**2, abs=1e-12)
    assert h_neg1_tensor_inner(a, a) == pytest.approx(1.1706736, abs=1e-6)


def test_antipodal_diracs():
    a, b = AtomicMeasure.dirac(0.0), AtomicMeasure.dirac(0.5)
    assert h_neg1_tensor_inner(a, b) == pytest.approx(0.9595173757, abs=1e-9)
    assert h_neg1_dist(a, b) == pytest.approx(np.sqrt(2 * (ORACLE_MAX - ORACLE_MIN)), abs=1e-12)
    assert h_neg1_dist(a, b) == pytest.approx(0.4949, abs=1e-3)


def test_arity_mismatch_raises():
    with pytest.raises(ValueError):
        h_neg1_tensor_inner(AtomicMeasure.dirac(0.1), AtomicMeasure.dirac(0.1, 0.2))


@settings(max_examples=30)
@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=1, max_size=6))
def test_distance_to_self_is_zero(xs):
    a = AtomicMeasure.empirical(xs)
    assert h_neg1_dist(a, a) <= 1e-7


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_gram_is_positive_semidefinite(seed):
    rng = np.random.default_rng(seed)
    x = rng.random(12)
    k = lambda_kernel(x[:, None] - x[None, :])
    assert np.linalg.eigvalsh(k).min() >= -1e-12


def test_probability_norm_strictly_below_dirac():
    uniform = GridDensity(np.ones(64))
    dirac = AtomicMeasure.dirac(0.37)
    assert np.sqrt(h_neg1_inner(uniform, uniform)) < np.sqrt(LAMBDA_MAX)
    assert np.sqrt(h_neg1_inner(dirac, dirac)) == pytest.approx(np.sqrt(LAMBDA_MAX), abs=1e-12)
    assert h_neg1_dist(dirac, uniform) > 0


def test_merged_adds_weights():
    a = AtomicMeasure(np.array([[0.2], [0.2], [0.7]]), np.array([0.25, 0.25, 0.5]))
    m = a.merged()
    assert len(m) == 2
    assert sorted(m.weights.tolist()) == [0.5, 0.5]


# ---------------------------------------------------------------------------
# exact cell kernels against quadrature


def test_atoms_cells_kernel_matches_quadrature():
    g = 16
    x = np.array([0.0, 0.13, 0.5, 0.97])
    k = kernel_atoms_cells(x, g)
    fine = 4000
    for j in range(g):
        u = (j + (np.arange(fine) + 0.5) / fine) / g
        ref = lambda_kernel(x[:, None] - u[None, :]).mean(axis=1)
        np.testing.assert_allclose(k[:, j], ref, atol=1e-7)


def test_cells_cells_kernel_matches_quadrature():
    g = 8
    k = kernel_cells_cells(g)
    fine = 400
    u = (np.arange(fine) + 0.5) / fine
    for j in range(g):
        a = (0 + u) / g
        b = (j + u) / g
        ref = lambda_kernel(a[:, None] - b[None, :]).mean()
        assert k[0, j] == pytest.approx(ref, abs=1e-6)


def test_one_cell_bump_self_energy():
    # Lambda(0) - Lambda(d) = d/2 - Lambda(0) d^2/2 + O(d^3) and E|U - V| = h/3 for U, V uniform on a cell
    g = 32
    h = 1.0 / g
    bump = np.zeros(g)
    bump[5] = g
    inner = h_neg1_inner(GridDensity(bump), GridDensity(bump))
    assert inner == pytest.approx(ORACLE_MAX - h / 6 + ORACLE_MAX * h**2 / 12, abs=1e-6)


def test_mixed_atomic_grid_inner_bins_atoms():
    g = 32
    f = GridDensity(1 + 0.5 * np.cos(2 * np.pi * cell_centers(g)))
    a = AtomicMeasure.empirical([0.01, 0.4])
    assert h_neg1_inner(a, f) == pytest.approx(h_neg1_inner(bin_atoms(a, g), f), abs=1e-14)


def test_bin_atoms_preserves_mass():
    a = AtomicMeasure.empirical([0.1, 0.2, 0.99])
    assert bin_atoms(a, 32).total_mass() == pytest.approx(1.0, abs=1e-14)


# ---------------------------------------------------------------------------
# spectral H^-s norms


def test_uniform_has_unit_norm():
    assert h_neg_s_norm_grid(GridDensity(np.ones(128)), 1.0) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_two_mode_norm(s):
    f = GridDensity(1 + np.cos(2 * np.pi * cell_centers(128)))
    expected = np.sqrt(1 + 0.5 * (1 + 4 * np.pi**2) ** (-s))
    assert h_neg_s_norm_grid(f, s) == pytest.approx(expected, abs=1e-12)


def test_narrow_bump_approaches_dirac_norm():
    values = []
    for g in (64, 256, 1024, 4096):
        bump = np.zeros(g)
        bump[0] = g
        values.append(h_neg_s_norm_grid(GridDensity(bump), 1.0))
    gaps = np.abs(np.array(values) - np.sqrt(ORACLE_MAX))
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 1e-3
