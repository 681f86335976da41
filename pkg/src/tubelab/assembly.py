"""Tensor-product discretization of the tube quadratic forms.

Grids are products of one-dimensional axes: the chart axes of the
submanifold and a fiber over each chart node (an interval for one normal
direction, a polar disk for two). All forms integrate against the product
measure sqrt(det g_L(x)) dx dw, assembled with multilinear elements whose
coefficients are frozen at cell midpoints; directions transverse to a
derivative pair are mass-lumped, which keeps the vertical block an exact
Kronecker product with the fiber pencil. That structure lets the discrete
fiber ground energy cancel the 1/eps^2 renormalization term without leaving
an amplified grid bias behind.

Conventions: node ordering is chart-major then fiber, value(u) returns the
form value with its leading 1/2, and the stiffness field stores the plain
bilinear matrix B with F(u) = u.B.u / 2, so pencil eigenvalues of
(stiffness, mass) are operator eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import fermi, geometry
from .errors import ValidationError

# 1D element blocks on [0, h]: gradient-gradient scales 1/h, mass scales h,
# gradient-mass pairing is h-free
_GG = np.array([[1.0, -1.0], [-1.0, 1.0]])
_MM = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
_GM = np.array([[-0.5, -0.5], [0.5, 0.5]])
_ML = np.array([[0.5, 0.0], [0.0, 0.5]])  # lumped transverse mass, scales h


@dataclass(frozen=True, eq=False)
class AxisGrid:
    """One coordinate direction of a tensor-product grid."""

    points: np.ndarray
    periodic: bool = False
    period: float = 0.0
    dirichlet_lo: bool = False
    dirichlet_hi: bool = False
    ghost_hi: float = math.nan  # pinned-zero corner beyond the last node

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def cells(self):
        """(lo index, hi index, midpoint, width); hi = -1 marks the ghost."""
        pts = self.points
        lo = list(range(self.n - 1))
        hi = list(range(1, self.n))
        mid = list(0.5 * (pts[:-1] + pts[1:]))
        h = list(pts[1:] - pts[:-1])
        if self.periodic:
            lo.append(self.n - 1)
            hi.append(0)
            width = self.period - pts[-1] + pts[0]
            mid.append(pts[-1] + 0.5 * width)
            h.append(width)
        elif not math.isnan(self.ghost_hi):
            lo.append(self.n - 1)
            hi.append(-1)
            mid.append(0.5 * (pts[-1] + self.ghost_hi))
            h.append(self.ghost_hi - pts[-1])
        return (np.array(lo), np.array(hi), np.array(mid), np.array(h))

    def node_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        if self.dirichlet_lo:
            mask[0] = True
        if self.dirichlet_hi:
            mask[-1] = True
        return mask


class _Product:
    """Assembly helper for a product of axes with fixed node ordering."""

    def __init__(self, axes: list[AxisGrid]):
        self.axes = axes
        self.dim = len(axes)
        self.counts = [ax.n for ax in axes]
        self.n_nodes = int(np.prod(self.counts))

        mask = np.zeros(self.counts, dtype=bool)
        for d, ax in enumerate(axes):
            shape = [1] * self.dim
            shape[d] = ax.n
            mask |= ax.node_mask().reshape(shape)
        self.mask = mask.reshape(-1)
        self.dof = np.full(self.n_nodes, -1, dtype=np.int64)
        self.dof[~self.mask] = np.arange(int((~self.mask).sum()))
        self.n_interior = int((~self.mask).sum())

        per_axis = [ax.cells() for ax in axes]
        grids_lo = np.meshgrid(*[c[0] for c in per_axis], indexing="ij")
        grids_hi = np.meshgrid(*[c[1] for c in per_axis], indexing="ij")
        grids_mid = np.meshgrid(*[c[2] for c in per_axis], indexing="ij")
        grids_h = np.meshgrid(*[c[3] for c in per_axis], indexing="ij")
        self.cell_mid = np.stack([g.reshape(-1) for g in grids_mid], axis=-1)
        self.cell_h = np.stack([g.reshape(-1) for g in grids_h], axis=-1)
        self.n_cells = self.cell_mid.shape[0]

        # global node index of each cell corner; -1 where a ghost is involved
        strides = np.ones(self.dim, dtype=np.int64)
        for d in range(self.dim - 2, -1, -1):
            strides[d] = strides[d + 1] * self.counts[d + 1]
        corners = np.zeros((self.n_cells, 2**self.dim), dtype=np.int64)
        ghost = np.zeros((self.n_cells, 2**self.dim), dtype=bool)
        for corner in range(2**self.dim):
            idx = np.zeros(self.n_cells, dtype=np.int64)
            bad = np.zeros(self.n_cells, dtype=bool)
            for d in range(self.dim):
                side = (corner >> (self.dim - 1 - d)) & 1
                take = (grids_hi if side else grids_lo)[d].reshape(-1)
                bad |= take < 0
                idx += np.maximum(take, 0) * strides[d]
            corners[:, corner] = idx
            ghost[:, corner] = bad
        corners[ghost] = -1
        self.corners = corners

    def assemble(self, coeff: np.ndarray) -> sp.csr_matrix:
        """Galerkin matrix for the symmetric coefficient field coeff.

        coeff has shape (n_cells, dim, dim) and already contains every
        measure density; entries transverse to each (K, L) derivative pair
        use lumped masses.
        """
        D = self.dim
        nloc = 2**D
        local = np.zeros((self.n_cells, nloc, nloc))
        for K in range(D):
            for L in range(D):
                cKL = coeff[:, K, L]
                if not np.any(cKL):
                    continue
                block = cKL.reshape(-1, 1, 1)
                for d in range(D):
                    h = self.cell_h[:, d].reshape(-1, 1, 1)
                    if d == K and d == L:
                        mat = _GG.reshape(1, 2, 2) / h
                    elif d == K:
                        mat = np.broadcast_to(_GM.reshape(1, 2, 2), block.shape[:1] + (2, 2))
                    elif d == L:
                        mat = np.broadcast_to(_GM.T.reshape(1, 2, 2), block.shape[:1] + (2, 2))
                    else:
                        mat = _ML.reshape(1, 2, 2) * h
                    # kron expansion, leading cell axis kept
                    block = block[:, :, None, :, None] * mat[:, None, :, None, :]
                    n1 = block.shape[1] * block.shape[2]
                    block = block.reshape(-1, n1, n1)
                local += block

        rows = np.repeat(self.corners, nloc, axis=1).reshape(-1)
        cols = np.tile(self.corners, (1, nloc)).reshape(-1)
        vals = local.reshape(-1)
        keep = (rows >= 0) & (cols >= 0)
        rows, cols = self.dof[rows[keep]], self.dof[cols[keep]]
        vals = vals[keep]
        keep = (rows >= 0) & (cols >= 0)
        mat = sp.coo_matrix(
            (vals[keep], (rows[keep], cols[keep])),
            shape=(self.n_interior, self.n_interior),
        ).tocsr()
        mat = (mat + mat.T) * 0.5
        mat.sum_duplicates()
        mat.sort_indices()
        return mat

    def node_coords(self) -> np.ndarray:
        grids = np.meshgrid(*[ax.points for ax in self.axes], indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=-1)


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True, eq=False)
class FiberPencil:
    """Discrete cross-section eigenpair used for renormalization."""

    stiffness: sp.csr_matrix
    mass: np.ndarray  # diagonal weights
    lam0: float
    u0: np.ndarray  # mass-normalized, positive mean


@dataclass(frozen=True, eq=False)
class FermiGrid:
    """Product grid over the unit tube with product-measure weights."""

    geom: geometry.GeometrySpec
    n_x_axes: int
    prod: _Product = field(repr=False)
    fiber_prod: _Product = field(repr=False)
    x_weight: np.ndarray = field(repr=False)
    fiber_weight: np.ndarray = field(repr=False)
    fiber_kind: str = "interval"

    @property
    def n_x(self) -> int:
        return self.x_weight.shape[0]

    @property
    def n_fiber_interior(self) -> int:
        return self.fiber_prod.n_interior

    @property
    def n_interior(self) -> int:
        return self.prod.n_interior

    @property
    def weights(self) -> np.ndarray:
        """m0 weight of every grid node (boundary nodes included)."""
        fib_all = np.zeros(self.fiber_prod.n_nodes)
        fib_all[~self.fiber_prod.mask] = self.fiber_weight
        if self.fiber_kind == "interval":
            h = self.fiber_prod.axes[0].points[1] - self.fiber_prod.axes[0].points[0]
            fib_all[self.fiber_prod.mask] = 0.5 * h
        return np.kron(self.x_weight, fib_all)

    @property
    def dirichlet_mask(self) -> np.ndarray:
        return np.tile(self.fiber_prod.mask, self.n_x)

    def interior_weights(self) -> np.ndarray:
        return np.kron(self.x_weight, self.fiber_weight)

    def interior_shape(self) -> tuple:
        x_shape = tuple(ax.n for ax in self.prod.axes[: self.n_x_axes])
        if self.fiber_kind == "interval":
            return x_shape + (self.fiber_prod.axes[0].n - 2,)
        return x_shape + tuple(ax.n for ax in self.fiber_prod.axes)

    def x_chart_nodes(self) -> np.ndarray:
        """Chart coordinates of the submanifold nodes, shaped for geometry."""
        coords = _Product(list(self.prod.axes[: self.n_x_axes])).node_coords()
        if self.geom.submanifold_dim == 1:
            return coords[:, 0]
        return coords

    def fiber_cart_nodes(self) -> np.ndarray:
        """Cartesian normal coordinates of the interior fiber nodes."""
        coords = self.fiber_prod.node_coords()[~self.fiber_prod.mask]
        if self.fiber_kind == "interval":
            return coords
        r, t = coords[:, 0], coords[:, 1]
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)


def _x_axes_grids(geom: geometry.GeometrySpec, n_x: int) -> list[AxisGrid]:
    axes = geometry.x_axes(geom)
    out = []
    for ax in axes:
        if ax.periodic:
            n = n_x
            pts = np.arange(n) * (ax.length / n)
            out.append(AxisGrid(pts, periodic=True, period=ax.length))
        else:
            n = max(8, n_x // 2)
            h = ax.length / n
            pts = (np.arange(n) + 0.5) * h
            out.append(AxisGrid(pts))
    return out


def _fiber_axes_grids(codim: int, n_fiber: int) -> tuple[list[AxisGrid], str]:
    if codim == 1:
        pts = np.linspace(-1.0, 1.0, n_fiber + 1)
        return [AxisGrid(pts, dirichlet_lo=True, dirichlet_hi=True)], "interval"
    dr = 1.0 / n_fiber
    r = (np.arange(n_fiber) + 0.5) * dr
    dt = 2.0 * math.pi / n_fiber
    t = np.arange(n_fiber) * dt
    return [
        AxisGrid(r, ghost_hi=1.0),
        AxisGrid(t, periodic=True, period=2.0 * math.pi),
    ], "polar"


def build_grid(geom: geometry.GeometrySpec, n_x: int, n_fiber: int) -> FermiGrid:
    """Product grid with n_x chart nodes per periodic axis and an n_fiber fiber.

    Codim one uses n_fiber intervals on (-1, 1) with the endpoints present
    but Dirichlet-masked; codim two uses an n_fiber x n_fiber polar grid with
    rings at (p + 1/2) dr and a pinned ghost ring at r = 1.
    """
    geometry._check_kind(geom)
    if int(n_x) != n_x or int(n_fiber) != n_fiber:
        raise ValidationError("grid resolutions must be integers")
    n_x, n_fiber = int(n_x), int(n_fiber)
    if n_x < 16:
        raise ValidationError(f"n_x = {n_x} is below the minimum of 16")
    if n_fiber < 8:
        raise ValidationError(f"n_fiber = {n_fiber} is below the minimum of 8")

    x_axes = _x_axes_grids(geom, n_x)
    fiber_axes, fiber_kind = _fiber_axes_grids(geom.codim, n_fiber)
    prod = _Product(x_axes + fiber_axes)
    fiber_prod = _Product(fiber_axes)

    # chart weights: adjacent cell-midpoint densities, so the vertical
    # Kronecker assembly agrees with direct cell assembly to roundoff
    if len(x_axes) == 1:
        lo, hi, midc, hc = x_axes[0].cells()
        xm = midc
        dens = geometry.tube_blocks(geom, xm, np.zeros((xm.shape[0], geom.codim))).sqrt_det_induced
        xw = np.zeros(x_axes[0].n)
        np.add.at(xw, lo, 0.5 * hc * dens)
        valid = hi >= 0
        np.add.at(xw, hi[valid], 0.5 * hc[valid] * dens[valid])
    else:
        # sphere chart: staggered polar axis times periodic azimuth
        lo0, hi0, mid0, h0 = x_axes[0].cells()
        n_phi = x_axes[1].n
        h_phi = x_axes[1].period / n_phi
        r2 = geom.params[0] ** 2
        dens0 = r2 * np.abs(np.sin(mid0))
        w_theta = np.zeros(x_axes[0].n)
        np.add.at(w_theta, lo0, 0.5 * h0 * dens0)
        np.add.at(w_theta, hi0, 0.5 * h0 * dens0)
        xw = np.kron(w_theta, np.full(n_phi, h_phi))

    if geom.codim == 1:
        hw = 2.0 / n_fiber
        fw = np.full(n_fiber - 1, hw)
    else:
        dr = 1.0 / n_fiber
        dt = 2.0 * math.pi / n_fiber
        r = (np.arange(n_fiber) + 0.5) * dr
        fw = np.repeat(r * dr * dt, n_fiber)

    if np.any(xw <= 0) or np.any(fw <= 0):
        raise RuntimeError("assembly produced a non-positive mass weight")

    return FermiGrid(
        geom=geom,
        n_x_axes=len(x_axes),
        prod=prod,
        fiber_prod=fiber_prod,
        x_weight=xw,
        fiber_weight=fw,
        fiber_kind=fiber_kind,
    )


# ---------------------------------------------------------------------------
# fiber pencil


def _fiber_coeff(fiber_prod: _Product) -> np.ndarray:
    """Polar disk gradient coefficient r * diag(1, 1/r^2) at cell midpoints."""
    mid = fiber_prod.cell_mid
    coeff = np.zeros((fiber_prod.n_cells, 2, 2))
    coeff[:, 0, 0] = mid[:, 0]
    coeff[:, 1, 1] = 1.0 / mid[:, 0]
    return coeff


def fiber_pencil(grid: FermiGrid) -> FiberPencil:
    """Ground eigenpair of the discrete cross-section Laplacian."""
    if grid.fiber_kind == "interval":
        n = grid.n_fiber_interior
        h = 2.0 / (n + 1)
        k = sp.diags(
            [np.full(n - 1, -1.0 / h), np.full(n, 2.0 / h), np.full(n - 1, -1.0 / h)],
            [-1, 0, 1],
        ).tocsr()
        lam, vec = scipy.linalg.eigh_tridiagonal(
            np.full(n, 2.0 / h**2), np.full(n - 1, -1.0 / h**2),
            select="i", select_range=(0, 0))
        u0 = vec[:, 0]
        mass = np.full(n, h)
    else:
        k = grid.fiber_prod.assemble(_fiber_coeff(grid.fiber_prod))
        mass = grid.fiber_weight
        lam, vec = scipy.linalg.eigh(
            k.toarray(), np.diag(mass), subset_by_index=[0, 0])
        u0 = vec[:, 0]
    u0 = u0 / math.sqrt(float(np.sum(mass * u0**2)))
    if u0.sum() < 0:
        u0 = -u0
    return FiberPencil(stiffness=k, mass=mass, lam0=float(lam[0]), u0=u0)


# ---------------------------------------------------------------------------
# forms


@dataclass(frozen=True, eq=False)
class FormPair:
    """Assembled quadratic form: F(u) = value(u) = u.stiffness.u / 2."""

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    meta: dict

    def value(self, u: np.ndarray) -> float:
        return 0.5 * float(u @ (self.stiffness @ u))

    def norm_sq(self, u: np.ndarray) -> float:
        return float(u @ (self.mass @ u))


def _symmetrize(mat: sp.csr_matrix) -> sp.csr_matrix:
    out = (mat + mat.T) * 0.5
    out.sum_duplicates()
    out.sort_indices()
    return out


def _vertical_matrix(grid: FermiGrid, pencil: FiberPencil,
                     renormalize: bool) -> sp.csr_matrix:
    k = pencil.stiffness
    if renormalize:
        k = k - pencil.lam0 * sp.diags(pencil.mass)
    return sp.kron(sp.diags(grid.x_weight), k, format="csr")


def _mass_matrix(grid: FermiGrid) -> sp.csr_matrix:
    return sp.diags(grid.interior_weights(), format="csr")


def _cell_geometry(grid: FermiGrid):
    """Split cell midpoints into chart and fiber parts (cartesian fiber)."""
    mid = grid.prod.cell_mid
    l = grid.n_x_axes
    xm = mid[:, 0] if grid.geom.submanifold_dim == 1 else mid[:, :l]
    if grid.fiber_kind == "interval":
        wm = mid[:, l:]
    else:
        r, t = mid[:, l], mid[:, l + 1]
        wm = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    return xm, wm


def _horizontal_coeff(grid: FermiGrid, eps: float | None) -> np.ndarray:
    """Coefficient of the chart-derivative block at cell midpoints.

    eps = None selects the reference metric (a = g_L, same twist); otherwise
    the tangential block of the exact metric at (x, eps w) is inverted per
    cell. The twist correction acts through the fiber angle derivative and
    is eps-free because the coupling row is exactly linear in w.
    """
    geom = grid.geom
    D = grid.prod.dim
    l = grid.n_x_axes
    xm, wm = _cell_geometry(grid)
    n = xm.shape[0]

    w_eval = np.zeros_like(wm) if eps is None else eps * wm
    blocks = geometry.tube_blocks(geom, xm, w_eval)
    a_star = np.linalg.inv(blocks.a)
    dens = blocks.sqrt_det_induced.copy()
    if grid.fiber_kind == "polar":
        dens = dens * grid.prod.cell_mid[:, l]  # polar measure factor r

    coeff = np.zeros((n, D, D))
    coeff[:, :l, :l] = a_star * dens.reshape(-1, 1, 1)
    if grid.fiber_kind == "polar":
        tw = geometry.normal_twist(geom)
        if tw != 0.0:
            # covariant derivative d_x - tw * d_theta
            axa = (a_star[:, 0, 0] * dens) * tw
            coeff[:, 0, D - 1] -= axa
            coeff[:, D - 1, 0] -= axa
            coeff[:, D - 1, D - 1] += axa * tw
    return coeff


def _vertical_coeff(grid: FermiGrid) -> np.ndarray:
    """Fiber-gradient coefficient of the reference metric at cell midpoints."""
    geom = grid.geom
    D = grid.prod.dim
    l = grid.n_x_axes
    xm, _ = _cell_geometry(grid)
    n = xm.shape[0]
    dens = geometry.tube_blocks(
        geom, xm, np.zeros((n, geom.codim))).sqrt_det_induced

    coeff = np.zeros((n, D, D))
    if grid.fiber_kind == "interval":
        coeff[:, l, l] = dens
    else:
        r = grid.prod.cell_mid[:, l]
        coeff[:, l, l] = dens * r
        coeff[:, l + 1, l + 1] = dens / r
    return coeff


def horizontal_block(grid: FermiGrid, eps: float | None = None) -> sp.csr_matrix:
    """Assembled chart-derivative (horizontal) stiffness block.

    With eps = None this is the block the reference form uses; no rescaling
    parameter enters its coefficients at all, so repeated assembly is
    bitwise reproducible.
    """
    return grid.prod.assemble(_horizontal_coeff(grid, eps))


def _check_form_inputs(geom, grid, eps, alpha):
    if grid.geom != geom:
        raise ValidationError("grid was built for a different geometry")
    if not (0.0 < eps <= geometry.eps_max(geom)):
        raise ValidationError(
            f"eps = {eps} is outside (0, {geometry.eps_max(geom)}]")
    if not math.isfinite(alpha):
        raise ValidationError("alpha must be finite")


def assemble_rescaled_form(geom: geometry.GeometrySpec, grid: FermiGrid,
                           eps: float, alpha: float) -> FormPair:
    """Renormalized form of the exact tube metric, pulled back to the unit tube.

    F(u) = (1/2) int m0 [ (1/eps^2)(|d_w u|^2 - lam0_h u^2)
                          + a*(x, eps w)(d_x u - tw d_theta u)^2
                          + (W(x, eps w) + alpha) u^2 ].
    """
    _check_form_inputs(geom, grid, eps, alpha)
    pencil = fiber_pencil(grid)
    vert = _vertical_matrix(grid, pencil, renormalize=True) / eps**2
    horiz = horizontal_block(grid, eps)

    pf = fermi.potential_field(geom, grid.x_chart_nodes())
    xn = grid.x_chart_nodes()
    wn = grid.fiber_cart_nodes()
    reps = np.repeat(xn, wn.shape[0], axis=0)
    tiles = np.tile(wn, (grid.n_x, 1))
    w_nodes = pf.Wfull(reps, eps * tiles)

    weights = grid.interior_weights()
    pot = sp.diags(weights * (w_nodes + alpha), format="csr")
    stiff = _symmetrize(vert + horiz + pot)
    mass = _mass_matrix(grid)
    if np.any(mass.diagonal() <= 0):
        raise RuntimeError("assembly produced a non-positive mass weight")
    return FormPair(stiffness=stiff, mass=mass, meta={
        "epsilon": eps, "alpha": alpha, "form_kind": "rescaled",
        "lambda0_h": pencil.lam0,
    })


def assemble_reference_form(geom: geometry.GeometrySpec, grid: FermiGrid,
                            eps: float, alpha: float) -> FormPair:
    """Form of the product reference metric: vertical + horizontal + alpha."""
    _check_form_inputs(geom, grid, eps, alpha)
    pencil = fiber_pencil(grid)
    vert = _vertical_matrix(grid, pencil, renormalize=True) / eps**2
    horiz = horizontal_block(grid)
    mass = _mass_matrix(grid)
    stiff = _symmetrize(vert + horiz + alpha * mass)
    return FormPair(stiffness=stiff, mass=mass, meta={
        "epsilon": eps, "alpha": alpha, "form_kind": "reference",
        "lambda0_h": pencil.lam0,
    })


def assemble_q0(geom: geometry.GeometrySpec, grid: FermiGrid,
                route: str = "split") -> FormPair:
    """Unrenormalized Dirichlet form of the reference metric.

    route = "split" assembles vertical and horizontal blocks separately;
    route = "direct" assembles one pass with the full dual-metric coefficient.
    The two must agree to roundoff; keeping both guards the decomposition.
    """
    if route not in ("split", "direct"):
        raise ValidationError(f"unknown assembly route {route!r}")
    pencil = fiber_pencil(grid)
    if route == "split":
        vert = _vertical_matrix(grid, pencil, renormalize=False)
        horiz = horizontal_block(grid)
        stiff = _symmetrize(vert + horiz)
    else:
        coeff = _vertical_coeff(grid) + _horizontal_coeff(grid, None)
        stiff = _symmetrize(grid.prod.assemble(coeff))
    return FormPair(stiffness=stiff, mass=_mass_matrix(grid), meta={
        "epsilon": None, "alpha": 0.0, "form_kind": "q0",
        "lambda0_h": pencil.lam0,
    })


def assemble_limit_form(geom: geometry.GeometrySpec, n_x: int,
                        alpha: float) -> FormPair:
    """Discretized limit form on the submanifold: (1/2) int (|dv|^2 + (W_L + alpha) v^2)."""
    geometry._check_kind(geom)
    if int(n_x) != n_x or n_x < 16:
        raise ValidationError(f"n_x = {n_x} is below the minimum of 16")
    if not math.isfinite(alpha):
        raise ValidationError("alpha must be finite")
    x_axes = _x_axes_grids(geom, int(n_x))
    prod = _Product(x_axes)
    mid = prod.cell_mid
    l = len(x_axes)
    xm = mid[:, 0] if geom.submanifold_dim == 1 else mid
    blocks = geometry.tube_blocks(geom, xm, np.zeros((xm.shape[0], geom.codim)))
    gl_inv = np.linalg.inv(blocks.a)
    coeff = gl_inv * blocks.sqrt_det_induced.reshape(-1, 1, 1)
    stiff_grad = prod.assemble(coeff)

    xn = prod.node_coords()
    xn_geom = xn[:, 0] if geom.submanifold_dim == 1 else xn
    xw = np.zeros(prod.n_nodes)
    lo, hi, midc, hc = x_axes[0].cells()
    if l == 1:
        dens_mid = geometry.tube_blocks(
            geom, midc, np.zeros((midc.shape[0], geom.codim))).sqrt_det_induced
        np.add.at(xw, lo, 0.5 * hc * dens_mid)
        valid = hi >= 0
        np.add.at(xw, hi[valid], 0.5 * hc[valid] * dens_mid[valid])
    else:
        r2 = geom.params[0] ** 2
        w_theta = np.zeros(x_axes[0].n)
        dens0 = r2 * np.abs(np.sin(midc))
        np.add.at(w_theta, lo, 0.5 * hc * dens0)
        np.add.at(w_theta, hi, 0.5 * hc * dens0)
        n_phi = x_axes[1].n
        xw = np.kron(w_theta, np.full(n_phi, x_axes[1].period / n_phi))

    wl = fermi.effective_potential(geom, xn_geom)
    stiff = _symmetrize(stiff_grad + sp.diags(xw * (wl + alpha)))
    mass = sp.diags(xw, format="csr")
    return FormPair(stiffness=stiff, mass=mass, meta={
        "epsilon": None, "alpha": alpha, "form_kind": "limit",
        "lambda0_h": None,
    })


# ---------------------------------------------------------------------------
# ground-fiber projector and helpers


def project_E0(grid: FermiGrid, pencil: FiberPencil, u: np.ndarray) -> np.ndarray:
    """Project onto fields of the form v(x) * (discrete fiber ground state).

    Per chart node the fiber slice is paired with the mass-normalized
    discrete ground vector; idempotent and mass-self-adjoint by construction.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n_interior,):
        raise ValidationError(
            f"expected interior vector of length {grid.n_interior}, got {u.shape}")
    slices = u.reshape(grid.n_x, grid.n_fiber_interior)
    coeff = slices @ (pencil.mass * pencil.u0)
    return np.outer(coeff, pencil.u0).reshape(-1)


def smooth_interior(grid: FermiGrid, u: np.ndarray, passes: int = 1) -> np.ndarray:
    """(1/4, 1/2, 1/4) smoothing along every grid direction.

    Periodic directions wrap; the rest treat missing neighbors as zero,
    which matches the Dirichlet extension of interior fields.
    """
    shape = grid.interior_shape()
    out = np.asarray(u, dtype=float).reshape(shape)
    periodic = [ax.periodic for ax in grid.prod.axes[: grid.n_x_axes]]
    if grid.fiber_kind == "interval":
        periodic += [False]
    else:
        periodic += [False, True]
    for _ in range(passes):
        for d, per in enumerate(periodic):
            up = np.roll(out, 1, axis=d)
            dn = np.roll(out, -1, axis=d)
            if not per:
                sl_first = [slice(None)] * out.ndim
                sl_first[d] = 0
                up[tuple(sl_first)] = 0.0
                sl_last = [slice(None)] * out.ndim
                sl_last[d] = -1
                dn[tuple(sl_last)] = 0.0
            out = 0.5 * out + 0.25 * (up + dn)
    return out.reshape(-1)


def dump_matrix(mat: sp.spmatrix, path: str) -> None:
    """Write a sparse matrix as 'row col value' lines, 17 significant digits."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="\n") as fh:
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}\n")
