import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse as sp
from scipy.linalg import expm

from gradkf import (
    ConfigurationError,
    DiffusionSpec,
    LinearSystem,
    SelectorOutputMap,
    build_diffusion,
    build_tridiagonal,
    diffusion_operator,
    gaussian_bumps_initial,
    measure,
    output_matrix,
    selector_of,
    simulate,
)


# ---------------------------------------------------------------------------
# SelectorOutputMap
# ---------------------------------------------------------------------------

def test_selector_matrix():
    sel = SelectorOutputMap(gains=np.array([2.0, -0.5]), n=4)
    assert sel.p == 2
    assert_array_equal(sel.matrix(), [[2.0, 0, 0, 0], [0, -0.5, 0, 0]])


def test_selector_from_matrix_roundtrip():
    C = np.array([[1.5, 0.0, 0.0], [0.0, 3.0, 0.0]])
    sel = SelectorOutputMap.from_matrix(C)
    assert sel.n == 3
    assert_array_equal(sel.gains, [1.5, 3.0])
    assert_array_equal(sel.matrix(), C)
    # passing a selector through is a no-op
    assert SelectorOutputMap.from_matrix(sel) is sel


def test_selector_rejects_non_selector_shapes():
    with pytest.raises(ConfigurationError):
        SelectorOutputMap.from_matrix([[1.0, 1.0], [0.0, 1.0]])  # off-diagonal mass
    with pytest.raises(ConfigurationError):
        SelectorOutputMap.from_matrix([[0.0, 0.0], [0.0, 1.0]])  # zero gain
    with pytest.raises(ConfigurationError):
        SelectorOutputMap.from_matrix([[0.0, 1.0]])  # nonzero off the leading diagonal
    with pytest.raises(ConfigurationError):
        SelectorOutputMap.from_matrix(np.eye(3)[:, :2])  # p > n
    with pytest.raises(ConfigurationError):
        SelectorOutputMap(gains=np.array([1.0, 0.0]), n=2)
    with pytest.raises(ConfigurationError):
        SelectorOutputMap(gains=np.zeros(0), n=2)


# ---------------------------------------------------------------------------
# LinearSystem validation
# ---------------------------------------------------------------------------

def _sel(n, p=None):
    return SelectorOutputMap(gains=np.ones(n if p is None else p), n=n)


def test_system_scalar_q_and_r_expand():
    sys_ = LinearSystem(A=np.eye(2), C=_sel(2), Q=0.001, R=0.115)
    assert_array_equal(sys_.Q, 0.001 * np.eye(2))
    assert_array_equal(sys_.R, 0.115 * np.eye(2))
    assert_array_equal(sys_.r_diag, [0.115, 0.115])
    assert_array_equal(sys_.Upsilon, np.eye(2))


def test_system_vector_r():
    sys_ = LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=[0.1, 0.2])
    assert_array_equal(sys_.R, np.diag([0.1, 0.2]))


def test_system_rejects_bad_shapes():
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.ones((2, 3)), C=_sel(2), Q=0.0, R=1.0)
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.eye(2), C=_sel(3), Q=0.0, R=1.0)
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=np.ones((3, 3)))
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=[[1.0, 0.1], [0.1, 1.0]])
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=[-1.0, 1.0])
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.eye(2), C=_sel(2), Q=-0.5, R=1.0)
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=1.0, B=np.ones((3, 1)))
    with pytest.raises(ConfigurationError):
        LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=1.0, Upsilon=np.ones((3, 2)))
    with pytest.raises(ConfigurationError):
        # 1x1 Q on a 2-state plant needs an Upsilon
        LinearSystem(A=np.eye(2), C=_sel(2), Q=np.eye(1), R=1.0)
    with pytest.raises(ConfigurationError):
        LinearSystem(A=[[1.0], [2.0, 3.0]], C=_sel(2), Q=0.0, R=1.0)


def test_system_allows_zero_r_diagonal():
    # zero entries model noise-free channels at the plant level
    sys_ = LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=[0.0, 0.0])
    assert_array_equal(sys_.r_diag, [0.0, 0.0])


def test_system_accepts_dense_c():
    C = np.array([[1.0, 1.0]])
    sys_ = LinearSystem(A=np.eye(2), C=C, Q=0.0, R=1.0)
    assert sys_.p == 1
    assert_array_equal(output_matrix(sys_), C)
    with pytest.raises(ConfigurationError):
        selector_of(sys_)


def test_measure_and_selector_of():
    sys_ = LinearSystem(A=np.eye(3), C=_sel(3, 2), Q=0.0, R=1.0)
    assert_array_equal(measure(sys_, np.array([1.0, 2.0, 3.0])), [1.0, 2.0])
    sel = selector_of(sys_)
    assert sel.p == 2 and sel.n == 3
    # dense matrix that happens to be a selector is accepted
    sys2 = LinearSystem(A=np.eye(2), C=np.diag([2.0, 3.0]), Q=0.0, R=1.0)
    assert_array_equal(selector_of(sys2).gains, [2.0, 3.0])


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_zero_noise_identity_is_constant():
    sys_ = LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=[0.0, 0.0])
    tr = simulate(sys_, x0=[1.0, -2.0], steps=5, seed=0)
    assert tr.states.shape == (6, 2)
    assert tr.measurements.shape == (5, 2)
    assert_array_equal(tr.states, np.tile([1.0, -2.0], (6, 1)))
    assert_array_equal(tr.measurements, np.tile([1.0, -2.0], (5, 1)))


def test_simulate_measurement_uses_pre_propagation_state():
    # with R = 0, measurement k must equal C @ states[k] exactly
    rng = np.random.default_rng(3)
    A = 0.5 * rng.standard_normal((3, 3))
    sys_ = LinearSystem(A=A, C=_sel(3, 2), Q=0.01, R=[0.0, 0.0])
    tr = simulate(sys_, x0=rng.standard_normal(3), steps=20, seed=11)
    assert_array_equal(tr.measurements, tr.states[:-1, :2])


def test_simulate_deterministic_per_seed():
    sys_ = LinearSystem(A=0.9 * np.eye(2), C=_sel(2), Q=0.01, R=0.1)
    a = simulate(sys_, x0=[0.0, 0.0], steps=50, seed=42)
    b = simulate(sys_, x0=[0.0, 0.0], steps=50, seed=42)
    c = simulate(sys_, x0=[0.0, 0.0], steps=50, seed=43)
    assert_array_equal(a.states, b.states)
    assert_array_equal(a.measurements, b.measurements)
    assert not np.array_equal(a.states, c.states)


def test_simulate_noise_variance_calibrated():
    # long run: sample variances of w and v within 10% of Q and R
    sys_ = LinearSystem(A=np.zeros((2, 2)), C=_sel(2), Q=0.5, R=[0.115, 2.0])
    steps = 40000
    tr = simulate(sys_, x0=[0.0, 0.0], steps=steps, seed=1)
    # x_{k+1} = w_k since A = 0
    w_var = tr.states[1:].var(axis=0)
    v = tr.measurements - tr.states[:-1, :2]
    assert_allclose(w_var, [0.5, 0.5], rtol=0.1)
    assert_allclose(v.var(axis=0), [0.115, 2.0], rtol=0.1)


def test_simulate_with_inputs():
    sys_ = LinearSystem(A=np.eye(2), B=[[1.0], [0.0]], C=_sel(2), Q=0.0, R=[0.0, 0.0])
    tr = simulate(sys_, x0=[0.0, 0.0], inputs=np.ones(3), steps=3, seed=0)
    assert_array_equal(tr.states[:, 0], [0.0, 1.0, 2.0, 3.0])
    assert_array_equal(tr.states[:, 1], np.zeros(4))


def test_simulate_input_errors():
    no_b = LinearSystem(A=np.eye(2), C=_sel(2), Q=0.0, R=0.0)
    with pytest.raises(ConfigurationError):
        simulate(no_b, x0=[0.0, 0.0], inputs=np.ones(3), steps=3)
    with_b = LinearSystem(A=np.eye(2), B=[[1.0], [0.0]], C=_sel(2), Q=0.0, R=0.0)
    with pytest.raises(ConfigurationError):
        simulate(with_b, x0=[0.0, 0.0], inputs=np.ones(4), steps=3)
    with pytest.raises(ConfigurationError):
        simulate(with_b, x0=[0.0, 0.0, 0.0], steps=3)
    with pytest.raises(ConfigurationError):
        simulate(with_b, x0=[0.0, 0.0], steps=0)


def test_simulate_sparse_a_matches_dense():
    rng = np.random.default_rng(5)
    A = np.diag(rng.uniform(0.5, 0.9, 4))
    A[0, 1] = 0.05
    dense = LinearSystem(A=A, C=_sel(4, 2), Q=0.01, R=0.1)
    sparse_ = LinearSystem(A=sp.csr_array(A), C=_sel(4, 2), Q=0.01, R=0.1)
    td = simulate(dense, x0=np.ones(4), steps=30, seed=9)
    ts = simulate(sparse_, x0=np.ones(4), steps=30, seed=9)
    assert_allclose(ts.states, td.states, rtol=0, atol=1e-12)
    assert_allclose(ts.measurements, td.measurements, rtol=0, atol=1e-12)


def test_simulate_upsilon_routes_noise():
    # noise enters only the first state; the second stays deterministic
    sys_ = LinearSystem(A=np.eye(2), C=_sel(2), Q=np.eye(1),
                        R=[0.0, 0.0], Upsilon=[[1.0], [0.0]])
    tr = simulate(sys_, x0=[0.0, 7.0], steps=25, seed=2)
    assert_array_equal(tr.states[:, 1], np.full(26, 7.0))
    assert tr.states[1:, 0].std() > 0.1


# ---------------------------------------------------------------------------
# diffusion plant
# ---------------------------------------------------------------------------

def test_tridiagonal_frozen():
    assert_array_equal(build_tridiagonal(2), [[-2.0, 1.0], [1.0, -2.0]])
    assert_array_equal(build_tridiagonal(3, periodic=True),
                       [[-2.0, 1.0, 1.0], [1.0, -2.0, 1.0], [1.0, 1.0, -2.0]])
    # non-periodic: only interior rows conserve mass
    assert_array_equal(build_tridiagonal(3).sum(axis=1), [-1.0, 0.0, -1.0])
    with pytest.raises(ConfigurationError):
        build_tridiagonal(1)


def test_tridiagonal_symmetric_nonpositive():
    for n in range(2, 11):
        for periodic in (False, True):
            D = build_tridiagonal(n, periodic)
            assert_array_equal(D, D.T)
            assert np.linalg.eigvalsh(D).max() <= 1e-12


def test_diffusion_operator_frozen_2x2_grid():
    spec = DiffusionSpec(grid_n=2, alpha=1.0, beta=1.0, dx=1.0, dt=0.1)
    expected = 2.0 * np.array([
        [-4.0, 1.0, 1.0, 0.0],
        [1.0, -4.0, 0.0, 1.0],
        [1.0, 0.0, -4.0, 1.0],
        [0.0, 1.0, 1.0, -4.0],
    ])
    assert_array_equal(diffusion_operator(spec), expected)


def test_diffusion_operator_matches_matrix_form():
    # A_ct vec(U) must equal vec(alpha D U + beta U D^T) scaled by 2/dx^2,
    # with column-major vectorization
    spec = DiffusionSpec(grid_n=4, alpha=1.3, beta=0.7, dx=0.5, dt=0.1)
    D = build_tridiagonal(4)
    A_ct = diffusion_operator(spec)
    rng = np.random.default_rng(0)
    for _ in range(5):
        U = rng.standard_normal((4, 4))
        lhs = A_ct @ U.ravel(order="F")
        rhs = (2.0 / 0.5 ** 2) * (1.3 * D @ U + U @ (0.7 * D).T).ravel(order="F")
        assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_diffusion_operator_column_major_indexing():
    # moving along a grid column (fixed c, varying r) must look like the
    # first Kronecker factor: states r + c*grid_n are coupled by alpha
    spec = DiffusionSpec(grid_n=3, alpha=2.0, beta=5.0, dx=1.0, dt=0.1)
    A_ct = diffusion_operator(spec)
    # neighbors within a column differ by 1 in index -> alpha coupling
    assert A_ct[0, 1] == 2.0 * 2.0
    # neighbors within a row differ by grid_n -> beta coupling
    assert A_ct[0, 3] == 2.0 * 5.0


def test_build_diffusion_dt_zero_is_identity():
    spec = DiffusionSpec(grid_n=3, alpha=1.0, beta=1.0, dx=1.0, dt=0.0)
    assert_array_equal(build_diffusion(spec).A, np.eye(9))


def test_build_diffusion_first_order():
    spec = DiffusionSpec(grid_n=3, alpha=1.0, beta=2.0, dx=1.0, dt=0.01, taylor_order=1)
    A = build_diffusion(spec).A
    assert_allclose(A, np.eye(9) + 0.01 * diffusion_operator(spec), rtol=0, atol=1e-16)


def test_build_diffusion_taylor_converged():
    kw = dict(grid_n=6, alpha=1.0, beta=1.0, dx=1.0, dt=0.05, periodic=True)
    A20 = build_diffusion(DiffusionSpec(taylor_order=20, **kw)).A
    A25 = build_diffusion(DiffusionSpec(taylor_order=25, **kw)).A
    assert np.abs(A20 - A25).max() <= 1e-10


def test_build_diffusion_matches_expm():
    spec = DiffusionSpec(grid_n=5, alpha=0.8, beta=1.2, dx=1.0, dt=0.03, taylor_order=12)
    A = build_diffusion(spec).A
    assert_allclose(A, expm(spec.dt * diffusion_operator(spec)), rtol=0, atol=1e-9)


def test_build_diffusion_placeholders():
    sys_ = build_diffusion(DiffusionSpec(grid_n=3, alpha=1.0, beta=1.0, dx=1.0, dt=0.05))
    sel = selector_of(sys_)
    assert sel.p == 9
    assert_array_equal(sel.gains, np.ones(9))
    assert not sys_.Q.any()
    assert_array_equal(sys_.R, np.eye(9))


def test_diffusion_spec_validation():
    ok = dict(alpha=1.0, beta=1.0, dx=1.0, dt=0.1)
    with pytest.raises(ConfigurationError):
        DiffusionSpec(grid_n=1, **ok)
    with pytest.raises(ConfigurationError):
        DiffusionSpec(grid_n=3, alpha=1.0, beta=1.0, dx=0.0, dt=0.1)
    with pytest.raises(ConfigurationError):
        DiffusionSpec(grid_n=3, alpha=1.0, beta=1.0, dx=1.0, dt=-0.1)
    with pytest.raises(ConfigurationError):
        DiffusionSpec(grid_n=3, taylor_order=0, **ok)


# ---------------------------------------------------------------------------
# gaussian bumps
# ---------------------------------------------------------------------------

def test_bumps_empty_is_zero():
    assert_array_equal(gaussian_bumps_initial(4, []), np.zeros(16))


def test_bumps_peak_location_column_major():
    x = gaussian_bumps_initial(5, [(3, 1, 2.5, 0.8)])
    assert x.shape == (25,)
    assert np.argmax(x) == 3 + 1 * 5
    assert x[3 + 1 * 5] == 2.5  # exp(0) at the center


def test_bumps_wide_limit_is_flat():
    x = gaussian_bumps_initial(6, [(2, 2, 4.0, 1e6)])
    assert np.ptp(x) <= 1e-6 * 4.0
    assert_allclose(x, 4.0, rtol=1e-6)


def test_bumps_mirror_symmetry():
    n = 7
    a = gaussian_bumps_initial(n, [(1.0, 2.0, 1.0, 1.5)]).reshape((n, n), order="F")
    b = gaussian_bumps_initial(n, [(1.0, 4.0, 1.0, 1.5)]).reshape((n, n), order="F")
    # mirror about the middle column: identical integer distances, so exact
    assert_array_equal(a, b[:, ::-1])


def test_bumps_validation():
    with pytest.raises(ConfigurationError):
        gaussian_bumps_initial(4, [(4, 0, 1.0, 1.0)])  # center off the grid
    with pytest.raises(ConfigurationError):
        gaussian_bumps_initial(4, [(-0.5, 0, 1.0, 1.0)])
    with pytest.raises(ConfigurationError):
        gaussian_bumps_initial(4, [(1, 1, 1.0, 0.0)])  # degenerate width
