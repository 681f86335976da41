import numpy as np
import pytest
import scipy.sparse as sp

from tubelab import assembly, eigen, fermi, geometry
from tubelab.errors import ValidationError


def circle():
    return geometry.circle_in_plane(1.0)


def winding():
    return geometry.space_curve(0.2, winding=0.3)


def straight():
    s = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)
    return geometry.plane_curve(np.zeros_like(s), 2 * np.pi)


def default_alpha(geom, grid):
    pf = fermi.potential_field(geom, grid.x_chart_nodes())
    return pf.alpha_floor + 1.0


# ---------------------------------------------------------------------------
# grids and weights


def test_grid_counting():
    grid = assembly.build_grid(circle(), 16, 8)
    assert grid.n_x == 16
    assert grid.n_fiber_interior == 7
    assert grid.n_interior == 16 * 7


def test_grid_resolution_floor():
    with pytest.raises(ValidationError):
        assembly.build_grid(circle(), 15, 8)
    with pytest.raises(ValidationError):
        assembly.build_grid(circle(), 16, 7)


def test_circle_weight_sum_exact():
    # arc-length chart has unit density, so the product rule is exact: 2pi * 2
    grid = assembly.build_grid(circle(), 16, 8)
    assert grid.weights.sum() == pytest.approx(4 * np.pi, abs=1e-12)
    assert np.all(grid.weights > 0)


def test_sphere_weight_sum():
    grid = assembly.build_grid(geometry.sphere_in_r3(1.0), 32, 8)
    total = grid.weights.sum()
    assert total == pytest.approx(8 * np.pi, rel=5e-3)


def test_dirichlet_mask_on_boundary():
    grid = assembly.build_grid(circle(), 16, 8)
    mask = grid.dirichlet_mask
    # codim 1: two fiber endpoints per x node
    assert mask.sum() == 2 * 16
    per_slice = mask.reshape(16, -1)
    assert np.all(per_slice[:, 0]) and np.all(per_slice[:, -1])
    assert not per_slice[:, 1:-1].any()


def test_polar_fiber_weight_sum():
    grid = assembly.build_grid(winding(), 16, 8)
    # interior polar weights tile the unit disk up to the pinned boundary ring
    fiber_total = grid.interior_weights().sum() / grid.x_weight.sum()
    assert fiber_total == pytest.approx(np.pi, rel=1e-12)


def test_mass_matrix_is_quadrature_rule():
    grid = assembly.build_grid(circle(), 16, 8)
    F = assembly.assemble_rescaled_form(circle(), grid, 0.2, 3.0)
    diag = F.mass.diagonal()
    h_x = 2 * np.pi / 16
    h_w = 2.0 / 8
    # unit density: every interior node carries the same product cell volume
    assert np.allclose(diag, h_x * h_w, rtol=1e-12)
    off = F.mass - sp.diags(diag)
    assert off.nnz == 0


# ---------------------------------------------------------------------------
# rescaled form


def test_straight_tube_ground_state_energy():
    geom = straight()
    grid = assembly.build_grid(geom, 32, 12)
    pen = assembly.fiber_pencil(grid)
    alpha = 2.5
    F = assembly.assemble_rescaled_form(geom, grid, 0.1, alpha)
    u = np.kron(np.ones(grid.n_x), pen.u0)
    # vertical part cancels against the discrete renormalization exactly
    assert F.value(u) == pytest.approx(0.5 * alpha * F.norm_sq(u), rel=1e-10)


def test_circle_effective_potential_shift():
    geom = circle()
    grid = assembly.build_grid(geom, 64, 16)
    alpha = default_alpha(geom, grid)
    pen = assembly.fiber_pencil(grid)
    F = assembly.assemble_rescaled_form(geom, grid, 0.1, alpha)
    u = np.kron(np.ones(grid.n_x), pen.u0)
    lhs = 2.0 * F.value(u) - alpha * F.norm_sq(u)
    assert abs(lhs - (-np.pi / 2)) < 0.05


def test_stiffness_bitwise_symmetric():
    geom = circle()
    grid = assembly.build_grid(geom, 16, 8)
    F = assembly.assemble_rescaled_form(geom, grid, 0.2, 3.0)
    assert (F.stiffness != F.stiffness.T).nnz == 0
    assert (F.mass != F.mass.T).nnz == 0


def test_rescaled_validation():
    geom = circle()
    grid = assembly.build_grid(geom, 16, 8)
    with pytest.raises(ValidationError):
        assembly.assemble_rescaled_form(geom, grid, 2 * geometry.eps_max(geom), 3.0)
    with pytest.raises(ValidationError):
        assembly.assemble_rescaled_form(geom, grid, 0.0, 3.0)
    with pytest.raises(ValidationError):
        assembly.assemble_rescaled_form(geom, grid, 0.1, np.inf)
    other = assembly.build_grid(geometry.sphere_in_r3(1.0), 16, 8)
    with pytest.raises(ValidationError):
        assembly.assemble_rescaled_form(geom, other, 0.1, 3.0)


def test_zero_function_zero_energy():
    geom = circle()
    grid = assembly.build_grid(geom, 16, 8)
    F = assembly.assemble_rescaled_form(geom, grid, 0.2, 3.0)
    assert F.value(np.zeros(grid.n_interior)) == 0.0


# ---------------------------------------------------------------------------
# reference form and the horizontal block


def test_horizontal_block_eps_free():
    geom = winding()
    grid = assembly.build_grid(geom, 16, 8)
    qh1 = assembly.horizontal_block(grid)
    qh2 = assembly.horizontal_block(grid)
    assert (qh1 != qh2).nnz == 0
    assert np.array_equal(qh1.data, qh2.data)
    # the assembled reference stiffness contains that block structurally
    alpha = 1.0
    pen = assembly.fiber_pencil(grid)
    vert = assembly._vertical_matrix(grid, pen, renormalize=True)
    for eps in (0.2, 0.1):
        F = assembly.assemble_reference_form(geom, grid, eps, alpha)
        recon = vert / eps**2 + qh1 + alpha * F.mass
        diff = (F.stiffness - recon)
        scale = np.abs(F.stiffness.data).max()
        assert np.abs(diff.data).max() if diff.nnz else 0.0 <= 1e-12 * scale


def test_reference_form_product_state():
    # for vanishing normal connection the reference energy of u0 x v
    # collapses to the base form of v
    geom = circle()
    grid = assembly.build_grid(geom, 64, 16)
    pen = assembly.fiber_pencil(grid)
    alpha = 2.0
    F0 = assembly.assemble_reference_form(geom, grid, 0.1, alpha)
    x = grid.x_chart_nodes()
    v = np.cos(x)
    u = np.kron(v, pen.u0)
    target = 0.5 * np.pi * (1.0 + alpha)
    assert F0.value(u) == pytest.approx(target, rel=5e-3)


def test_vertical_block_psd_after_renormalization():
    geom = circle()
    grid = assembly.build_grid(geom, 16, 12)
    pen = assembly.fiber_pencil(grid)
    vert = assembly._vertical_matrix(grid, pen, renormalize=True).toarray()
    w = np.linalg.eigvalsh(vert)
    assert w.min() >= -1e-12 * max(1.0, w.max())


# ---------------------------------------------------------------------------
# q0 decomposition


@pytest.mark.parametrize("geom_f", [circle, winding])
def test_q0_three_term_decomposition(geom_f):
    geom = geom_f()
    grid = assembly.build_grid(geom, 16, 8)
    q0 = assembly.assemble_q0(geom, grid, route="direct")
    qh = assembly.horizontal_block(grid)
    pen = assembly.fiber_pencil(grid)
    eps = 0.25
    ref = assembly.assemble_reference_form(geom, grid, eps, 0.0)
    rng = np.random.default_rng(7)
    m = q0.mass
    for _ in range(100):
        u = rng.standard_normal(grid.n_interior)
        qh_u = u @ (qh @ u)
        qv_u = eps**2 * (u @ (ref.stiffness @ u) - qh_u)
        lhs = u @ (q0.stiffness @ u)
        rhs = qv_u + qh_u + pen.lam0 * (u @ (m @ u))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_q0_routes_agree():
    geom = winding()
    grid = assembly.build_grid(geom, 16, 8)
    a = assembly.assemble_q0(geom, grid, route="split")
    b = assembly.assemble_q0(geom, grid, route="direct")
    rng = np.random.default_rng(11)
    for _ in range(100):
        u = rng.standard_normal(grid.n_interior)
        va, vb = a.value(u), b.value(u)
        assert abs(va - vb) <= 1e-10 * max(abs(va), 1.0)


def test_killing_term_annihilated_on_projected_fields(monkeypatch):
    geom = winding()
    grid = assembly.build_grid(geom, 16, 8)
    pen = assembly.fiber_pencil(grid)
    rng = np.random.default_rng(3)
    u = assembly.project_E0(grid, pen, rng.standard_normal(grid.n_interior))
    qh = assembly.horizontal_block(grid)
    with_twist = u @ (qh @ u)
    monkeypatch.setattr(geometry, "normal_twist", lambda g: 0.0)
    qh0 = assembly.horizontal_block(grid)
    without = u @ (qh0 @ u)
    assert (qh != qh0).nnz > 0  # the connection genuinely enters the block
    assert abs(with_twist - without) <= 1e-8 * abs(with_twist)


# ---------------------------------------------------------------------------
# limit form spectra


def test_limit_spectrum_circle():
    lim = assembly.assemble_limit_form(circle(), 256, 0.0)
    s = eigen.dense_eigenpairs(lim, 5)
    assert np.allclose(s.eigenvalues, [-0.25, 0.75, 0.75, 3.75, 3.75], atol=2e-3)


def test_limit_spectrum_sphere():
    lim = assembly.assemble_limit_form(geometry.sphere_in_r3(1.0), 64, 0.0)
    s = eigen.dense_eigenpairs(lim, 9)
    target = np.array([0.0] + [2.0] * 3 + [6.0] * 5)
    assert np.allclose(s.eigenvalues, target, atol=0.05)
    # degeneracy groups stay tight under the discretization
    assert np.ptp(s.eigenvalues[1:4]) < 0.04
    assert np.ptp(s.eigenvalues[4:9]) < 0.04


def test_limit_spectrum_equator():
    lim = assembly.assemble_limit_form(geometry.latitude_circle(np.pi / 2), 256, 0.0)
    s = eigen.dense_eigenpairs(lim, 5)
    assert np.allclose(s.eigenvalues, [-0.5, 0.5, 0.5, 3.5, 3.5], atol=2e-3)


def test_limit_form_resolution_floor():
    with pytest.raises(ValidationError):
        assembly.assemble_limit_form(circle(), 8, 0.0)


# ---------------------------------------------------------------------------
# ground-state projector


def test_projector_fixes_product_states():
    geom = winding()
    grid = assembly.build_grid(geom, 16, 8)
    pen = assembly.fiber_pencil(grid)
    x = grid.x_chart_nodes()
    v = 1.0 + 0.3 * np.sin(2 * np.pi * x / x.max() * 2)
    u = np.kron(v, pen.u0)
    pu = assembly.project_E0(grid, pen, u)
    assert np.abs(pu - u).max() <= 1e-12 * np.abs(u).max()


def test_projector_kills_antisymmetric_fields():
    geom = circle()
    grid = assembly.build_grid(geom, 16, 8)
    pen = assembly.fiber_pencil(grid)
    w = grid.fiber_cart_nodes()[:, 0]
    u = np.kron(np.ones(grid.n_x), w)  # odd in the fiber coordinate
    pu = assembly.project_E0(grid, pen, u)
    assert np.abs(pu).max() <= 1e-10


def test_projector_idempotent_and_contractive():
    geom = circle()
    grid = assembly.build_grid(geom, 16, 8)
    pen = assembly.fiber_pencil(grid)
    F = assembly.assemble_rescaled_form(geom, grid, 0.2, 3.0)
    m = F.mass
    rng = np.random.default_rng(5)
    for _ in range(100):
        u = rng.standard_normal(grid.n_interior)
        pu = assembly.project_E0(grid, pen, u)
        ppu = assembly.project_E0(grid, pen, pu)
        assert np.abs(ppu - pu).max() <= 1e-12 * max(np.abs(pu).max(), 1.0)
        assert pu @ (m @ pu) <= u @ (m @ u) * (1 + 1e-12)


def test_projector_length_validation():
    geom = circle()
    grid = assembly.build_grid(geom, 16, 8)
    pen = assembly.fiber_pencil(grid)
    with pytest.raises(ValidationError):
        assembly.project_E0(grid, pen, np.zeros(3))


# ---------------------------------------------------------------------------
# fiber pencils


def test_interval_fiber_ground_state():
    grid = assembly.build_grid(circle(), 16, 16)
    pen = assembly.fiber_pencil(grid)
    h = 2.0 / 16
    lam_exact = (2 - 2 * np.cos(np.pi * h / 2)) / h**2
    assert pen.lam0 == pytest.approx(lam_exact, rel=1e-13)
    # mass-normalized with positive mean
    assert pen.u0 @ (pen.mass * pen.u0) == pytest.approx(1.0, rel=1e-12)
    assert pen.u0.sum() > 0


def test_polar_fiber_ground_state():
    grid = assembly.build_grid(winding(), 16, 8)
    pen = assembly.fiber_pencil(grid)
    # discrete value sits below the continuum Bessel eigenvalue at this mesh
    from tubelab import ball

    lam_cont = ball.ball_eigenvalue(2, 0)
    assert abs(pen.lam0 - lam_cont) < 0.1
    prof = pen.u0.reshape(grid.interior_shape()[1:])
    # ground state is angularly constant
    assert (prof.max(axis=1) - prof.min(axis=1)).max() < 1e-12


# ---------------------------------------------------------------------------
# matrix dump


def test_dump_matrix_format(tmp_path):
    grid = assembly.build_grid(circle(), 16, 8)
    F = assembly.assemble_rescaled_form(circle(), grid, 0.2, 3.0)
    out = tmp_path / "stiff.txt"
    assembly.dump_matrix(F.stiffness, str(out))
    raw = out.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().strip().split("\n")
    coo = F.stiffness.tocoo()
    assert len(lines) == coo.nnz
    rows, cols, vals = [], [], []
    for line in lines:
        r, c, v = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    rebuilt = sp.coo_matrix((vals, (rows, cols)), shape=F.stiffness.shape)
    diff = (rebuilt.tocsr() - F.stiffness)
    assert diff.nnz == 0
    # lexicographic ordering by row then column
    order = np.lexsort((cols, rows))
    assert np.array_equal(order, np.arange(len(lines)))
