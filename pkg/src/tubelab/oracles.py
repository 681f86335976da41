"""Independent reference eigenvalues for the convergence studies.

Every study compares against numbers produced by a different route than the
tensor-grid assembly: separable special-function eigenvalues for the tube
around a circle (annulus) and around a sphere (spherical shell), closed-form
mode sums for the limit operators on the submanifolds, and Richardson
extrapolation of the one-dimensional limit pencils where no closed form
exists.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spl
import scipy.special as special
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import assembly, eigen, fermi, geometry
from .errors import ValidationError


def _first_root(f, lo: float, hi: float, steps: int) -> float:
    """First sign change of f on [lo, hi], refined by bisection."""
    ks = np.linspace(lo, hi, steps)
    vals = np.array([f(k) for k in ks])
    sign = np.sign(vals)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    if idx.size == 0:
        raise ValidationError("no eigenvalue bracket found in the scan window")
    i = idx[0]
    return brentq(f, ks[i], ks[i + 1], xtol=1e-13, rtol=8.9e-16)


def annulus_eigenvalues(r_inner: float, r_outer: float, count: int) -> np.ndarray:
    """Lowest Dirichlet Laplacian eigenvalues of the annulus r_inner < r < r_outer.

    Separation of variables gives radial cross-products of Bessel functions;
    the lowest group consists of the first radial root for each angular
    order n, with multiplicity two for n >= 1.
    """
    if not (0 < r_inner < r_outer):
        raise ValidationError("annulus radii must satisfy 0 < r_inner < r_outer")
    width = r_outer - r_inner
    k_lo, k_hi = 0.5 * np.pi / width, 1.6 * np.pi / width
    out: list[float] = []
    n = 0
    while len(out) < count:
        def cross(k, n=n):
            return (special.jv(n, k * r_inner) * special.yv(n, k * r_outer)
                    - special.jv(n, k * r_outer) * special.yv(n, k * r_inner))

        k = _first_root(cross, k_lo, k_hi, 400)
        lam = k * k
        out.append(lam)
        if n > 0:
            out.append(lam)
        n += 1
    return np.sort(np.array(out[:count]))


def shell_eigenvalues(r_inner: float, r_outer: float, count: int) -> np.ndarray:
    """Lowest Dirichlet eigenvalues of the spherical shell by radial shooting.

    With u = r g the radial problem becomes -u'' + l(l+1)/r^2 u = lam u with
    u vanishing at both radii; for each angular degree l the first root of
    the endpoint value is located by a scan plus bisection on a high-order
    integrator. Degeneracy is 2l + 1.
    """
    if not (0 < r_inner < r_outer):
        raise ValidationError("shell radii must satisfy 0 < r_inner < r_outer")
    width = r_outer - r_inner
    base = (np.pi / width) ** 2

    def endpoint(lam: float, l: int) -> float:
        def rhs(r, y):
            return [y[1], (l * (l + 1) / (r * r) - lam) * y[0]]

        sol = solve_ivp(rhs, (r_inner, r_outer), [0.0, 1.0], method="DOP853",
                        rtol=1e-12, atol=1e-14, dense_output=False)
        return sol.y[0, -1]

    out: list[float] = []
    l = 0
    while len(out) < count:
        lam = _first_root(lambda s, l=l: endpoint(s, l),
                          0.5 * base, base + l * (l + 1) / r_inner**2 + 2.0, 200)
        out.extend([lam] * (2 * l + 1))
        l += 1
    return np.sort(np.array(out[:count]))


def shell_eigenvalues_bessel(r_inner: float, r_outer: float,
                             count: int) -> np.ndarray:
    """Dual route to shell_eigenvalues via spherical Bessel cross-products."""
    if not (0 < r_inner < r_outer):
        raise ValidationError("shell radii must satisfy 0 < r_inner < r_outer")
    width = r_outer - r_inner
    k_lo, k_hi = 0.5 * np.pi / width, 1.8 * np.pi / width
    out: list[float] = []
    l = 0
    while len(out) < count:
        def cross(k, l=l):
            return (special.spherical_jn(l, k * r_inner)
                    * special.spherical_yn(l, k * r_outer)
                    - special.spherical_jn(l, k * r_outer)
                    * special.spherical_yn(l, k * r_inner))

        k = _first_root(cross, k_lo, k_hi, 400)
        out.extend([k * k] * (2 * l + 1))
        l += 1
    return np.sort(np.array(out[:count]))


# ---------------------------------------------------------------------------
# closed-form limit spectra


def circle_limit_spectrum(radius: float, count: int) -> np.ndarray:
    """Eigenvalues n^2/R^2 - 1/(4R^2) of the limit operator on a circle."""
    vals = []
    n = 0
    while len(vals) < count:
        lam = (n * n - 0.25) / radius**2
        vals.extend([lam] if n == 0 else [lam, lam])
        n += 1
    return np.array(vals[:count])


def sphere_limit_spectrum(radius: float, count: int) -> np.ndarray:
    """Eigenvalues l(l+1)/R^2 of the limit operator on a round sphere."""
    vals = []
    l = 0
    while len(vals) < count:
        vals.extend([l * (l + 1) / radius**2] * (2 * l + 1))
        l += 1
    return np.array(vals[:count])


def latitude_limit_spectrum(theta0: float, count: int) -> np.ndarray:
    """Limit eigenvalues on a latitude circle of the unit sphere.

    Arc-length Fourier modes on circumference 2 pi sin(theta0) shifted by the
    constant effective potential of the curve.
    """
    if not (0 < theta0 < np.pi):
        raise ValidationError("latitude angle must lie in (0, pi)")
    w = -0.5 - 0.25 / np.tan(theta0) ** 2
    vals = []
    n = 0
    while len(vals) < count:
        lam = (n / np.sin(theta0)) ** 2 + w
        vals.extend([lam] if n == 0 else [lam, lam])
        n += 1
    return np.array(vals[:count])


def limit_spectrum(geom, count: int):
    """Closed-form limit eigenvalues for geometries that have one, else None."""
    kind = geom.kind
    if kind == "CircleInPlane":
        return circle_limit_spectrum(geom.params[0], count)
    if kind == "SphereInR3":
        return sphere_limit_spectrum(geom.params[0], count)
    if kind == "LatitudeCircleOnSphere":
        return latitude_limit_spectrum(geom.params[0], count)
    return None


# ---------------------------------------------------------------------------
# Richardson extrapolation of the discrete limit pencil


def _potential_floor(geom) -> float:
    """Lower bound for the effective potential, sampled densely."""
    if geom.submanifold_dim == 1:
        ax = geometry.x_axes(geom)[0]
        probe = np.linspace(0.0, ax.length, 1024, endpoint=False)
    else:
        theta = np.linspace(0.01, np.pi - 0.01, 256)
        probe = np.column_stack([theta, np.zeros_like(theta)])
    return float(fermi.effective_potential(geom, probe).min())


def _sphere_limit_separated(geom, n: int, k: int) -> np.ndarray:
    """Lowest limit eigenvalues on the sphere via azimuthal separation.

    The limit operator commutes with rotations about the polar axis, so each
    azimuthal index m reduces to a polar two-point problem. Staggered flux
    nodes keep the scheme second order through the poles: the flux weight
    sin(theta) vanishes there, which encodes the natural boundary condition
    without any explicit constraint. Eigenvalues with m >= 1 count twice.
    """
    r = geom.params[0]
    h = np.pi / n
    theta = (np.arange(n) + 0.5) * h
    sin_nodes = np.sin(theta)
    sin_flux = np.sin(np.arange(1, n) * h)
    wl = fermi.effective_potential(
        geom, np.column_stack([theta, np.zeros(n)]))
    mass = h * sin_nodes
    collected = []
    for m in range(k + 2):
        diag = np.zeros(n)
        diag[:-1] += sin_flux / h
        diag[1:] += sin_flux / h
        diag += m * m * h / sin_nodes
        diag = diag / (r * r) + mass * wl
        off = -sin_flux / (h * r * r)
        # symmetrize the generalized pencil by the diagonal mass
        d = 1.0 / np.sqrt(mass)
        kk = min(k, n - 1)
        vals = sla.eigh_tridiagonal(
            diag * d * d, off * d[:-1] * d[1:],
            select="i", select_range=(0, kk - 1), eigvals_only=True)
        collected.extend(vals)
        if m > 0:
            collected.extend(vals)
    return np.sort(np.array(collected))[:k]


def _limit_eigs(geom, n_x: int, k: int, alpha: float) -> np.ndarray:
    if geom.kind == "SphereInR3":
        return _sphere_limit_separated(geom, n_x, k)
    pencil = assembly.assemble_limit_form(geom, n_x, alpha)
    n = pencil.stiffness.shape[0]
    if n <= 2500:
        return eigen.dense_eigenpairs(pencil, k).eigenvalues - alpha
    # large grids: shift-inverted Lanczos on a pencil made definite by a
    # potential-floor shift; a factorization route disjoint from the
    # package's own iteration
    c = 2.0 + max(0.0, -(_potential_floor(geom) + alpha))
    vals = spl.eigsh(
        (pencil.stiffness + c * pencil.mass).tocsc(), k=k,
        M=pencil.mass.tocsc(), sigma=0.0, which="LM",
        v0=np.full(n, 1.0 / np.sqrt(n)), return_eigenvectors=False)
    return np.sort(vals) - c - alpha


def richardson_limit(geom, n_x: int, k: int, alpha: float = 0.0) -> np.ndarray:
    """Limit eigenvalues extrapolated from grids n_x and 2 n_x.

    The scheme is second order, so (4 lam_fine - lam_coarse) / 3 removes the
    leading grid error and leaves the fourth-order remainder.
    """
    coarse = _limit_eigs(geom, n_x, k, alpha)
    fine = _limit_eigs(geom, 2 * n_x, k, alpha)
    return (4.0 * fine - coarse) / 3.0


def tube_eigenvalue_oracle(geom, eps: float, count: int) -> np.ndarray | None:
    """Separable exact tube eigenvalues after renormalization.

    Only the circle (annulus section) and the sphere (spherical shell) have
    separable tubes; other kinds return None. The subtraction uses the
    analytic fiber ground eigenvalue: the discrete pencils renormalize by
    their own discrete fiber eigenvalue precisely so that they approximate
    this quantity without an eps^{-2}-amplified grid term.
    """
    kind = geom.kind
    if kind == "CircleInPlane":
        r = geom.params[0]
        lam = annulus_eigenvalues(r - eps, r + eps, count)
    elif kind == "SphereInR3":
        r = geom.params[0]
        lam = shell_eigenvalues(r - eps, r + eps, count)
    else:
        return None
    return lam - np.pi**2 / (2 * eps) ** 2


def limit_from_tube_oracle(geom, count: int, eps: float = 0.05) -> np.ndarray | None:
    """Limit eigenvalues extrapolated from the separable tube oracle.

    The renormalized tube values approach the limit spectrum with an eps^2
    leading term, so one Richardson step over eps and eps/2 reaches the
    limit to a few parts in 10^7. Independent of every grid in the package.
    """
    coarse = tube_eigenvalue_oracle(geom, eps, count)
    if coarse is None:
        return None
    fine = tube_eigenvalue_oracle(geom, eps / 2, count)
    return (4.0 * fine - coarse) / 3.0
