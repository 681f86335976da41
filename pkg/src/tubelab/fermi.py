"""Two-term tube expansions and the effective potential.

The tube metric around the submanifold is expanded to second order in the
normal coordinate; the log volume density and the potential it induces are
derived both from closed curvature formulas and from finite differences of
the exact metric, so each route checks the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .ball import ball_eigenvalue
from .errors import ValidationError

FD_STEP = 1e-3


@dataclass(frozen=True)
class FermiJet:
    """Second-order normal-coordinate jet of the tube metric at one point.

    Blocks of g(x, w):
      tangential  a(w) = a0 + w^al a1[al] + w^al w^be a2[al, be] + O(|w|^3)
      coupling    c(w) = w^al c1[al] + O(|w|^3)            (l, k) per unit w
      normal      b(w) = I + w^al w^be b2[al, be] + O(|w|^3)
      log density = w^al logrho1[al] + w^al w^be logrho2[al, be] + O(|w|^3)
    a2, b2, logrho2 are stored symmetrized in (al, be).
    """

    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    c1: np.ndarray
    b2: np.ndarray
    logrho1: np.ndarray
    logrho2: np.ndarray

    def evaluate(self, w) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        """Truncated blocks (a, c, b, logrho) at normal offset w."""
        w = np.asarray(w, dtype=float).reshape(-1)
        k = self.logrho1.shape[0]
        if w.shape != (k,):
            raise ValidationError(f"expected {k} normal components, got {w.shape}")
        a = (self.a0
             + np.einsum("a,aij->ij", w, self.a1)
             + np.einsum("a,b,abij->ij", w, w, self.a2))
        c = np.einsum("a,ais->is", w, self.c1)
        b = np.eye(k) + np.einsum("a,b,abms->ms", w, w, self.b2)
        logrho = float(self.logrho1 @ w + w @ self.logrho2 @ w)
        return a, c, b, logrho


def metric_jet(geom: geometry.GeometrySpec, x) -> FermiJet:
    """Jet blocks from pointwise curvature data."""
    cd = geometry.curvature_at(geom, x)
    gl = cd.metric
    weing = cd.weingarten
    k, l = weing.shape[0], gl.shape[0]

    a1 = np.array([-2.0 * gl @ A for A in weing])

    a2 = np.zeros((k, k, l, l))
    for al in range(k):
        for be in range(k):
            sec = weing[al].T @ gl @ weing[be]
            mix = cd.mixed_curvature[:, al, :, be]
            a2[al, be] = 0.5 * (sec + sec.T) - 0.5 * (mix + mix.T)
    a2 = 0.5 * (a2 + np.swapaxes(a2, 0, 1))

    # c1[al][i, s] is the connection coefficient <d_i nu_al, nu_s>
    c1 = np.transpose(cd.normal_connection, (1, 0, 2))

    b2 = np.zeros((k, k, k, k))
    for al in range(k):
        for be in range(k):
            b2[al, be] = -(cd.normal_curvature[:, al, :, be]
                           + cd.normal_curvature[:, be, :, al]) / 6.0

    tra = np.array([np.trace(A) for A in weing])
    logrho1 = -tra

    gli = np.linalg.inv(gl)
    logrho2 = np.zeros((k, k))
    for al in range(k):
        for be in range(k):
            tr_ab = np.trace(weing[al] @ weing[be])
            r_norm = np.einsum("mm->", cd.normal_curvature[:, al, :, be])
            r_mix = np.einsum("ij,ij->", gli, cd.mixed_curvature[:, al, :, be])
            logrho2[al, be] = -0.5 * (tr_ab + r_norm / 3.0 + r_mix)
    logrho2 = 0.5 * (logrho2 + logrho2.T)

    return FermiJet(a0=gl, a1=a1, a2=a2, c1=c1, b2=b2,
                    logrho1=logrho1, logrho2=logrho2)


def density_jet_consistency(geom: geometry.GeometrySpec, x) -> float:
    """Residual between the log-density jet and the determinant-ratio jet.

    The density is sqrt(det g / det g0); expanding det through the metric
    blocks must reproduce logrho1/logrho2 coefficientwise.
    """
    jet = metric_jet(geom, x)
    ai = np.linalg.inv(jet.a0)
    k = jet.logrho1.shape[0]
    t1 = np.array([0.5 * np.trace(ai @ jet.a1[al]) for al in range(k)])
    res = float(np.abs(t1 - jet.logrho1).max())
    for al in range(k):
        for be in range(k):
            m1a = ai @ jet.a1[al]
            m1b = ai @ jet.a1[be]
            t2 = 0.5 * (np.trace(ai @ jet.a2[al, be])
                        - 0.5 * np.trace(m1a @ m1b)) \
                + 0.5 * np.trace(jet.b2[al, be])
            res = max(res, abs(t2 - jet.logrho2[al, be]))
    return res


# ---------------------------------------------------------------------------
# effective potential on the submanifold


def effective_potential(geom: geometry.GeometrySpec, x):
    """Potential of the limit operator, from closed curvature scalars.

    W_L = (1/2) scal_sub - (1/4) tension^2
          - (1/6)(scal_amb + ric_normal + scal_normal); vectorized over x.
    """
    arr, scalar = geometry._x_array(geom, x)
    weing = geometry.shape_operators(geom, arr)
    tra = np.trace(weing, axis1=2, axis2=3)
    tension_sq = np.sum(tra**2, axis=1)
    scal_sub, scal_amb, ric_normal, scal_normal = geometry._ambient_scalars(geom)
    out = (0.5 * scal_sub - 0.25 * tension_sq
           - (scal_amb + ric_normal + scal_normal) / 6.0)
    return float(out[0]) if scalar else out


def effective_potential_gauss(geom: geometry.GeometrySpec, x, flip_normal=False):
    """Same potential assembled from raw curvature tensors.

    Uses (1/2) * (laplacian of the log density at w = 0) - (1/4) tension^2,
    where the laplacian is written through traces of the shape operators and
    ambient curvature; equality with effective_potential is the Gauss-equation
    rewrite. flip_normal negates the normal frame to witness orientation
    independence.
    """
    arr, scalar = geometry._x_array(geom, x)
    n = arr.shape[0]
    out = np.empty(n)
    sign = -1.0 if flip_normal else 1.0
    for i in range(n):
        cd = geometry.curvature_at(geom, arr[i])
        weing = sign * cd.weingarten
        gli = np.linalg.inv(cd.metric)
        tra = np.array([np.trace(A) for A in weing])
        tr2 = sum(np.trace(A @ A) for A in weing)
        r_norm = np.einsum("mama->", cd.normal_curvature)
        r_mix = np.einsum("ij,iaja->", gli, cd.mixed_curvature)
        lap0 = float(np.sum(tra**2) - tr2 - r_norm / 3.0 - r_mix)
        out[i] = 0.5 * lap0 - 0.25 * float(np.sum(tra**2))
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# potential on the tube via finite differences of the exact metric


def _dual_blocks(geom, x, w):
    """sqrt(det g) and the flux coefficient P = sqrt(det g) g^{-1} (N, m, m)."""
    blocks = geometry.tube_blocks(geom, x, w)
    a, c = blocks.a, blocks.c
    n, l, k = c.shape
    ai = np.linalg.inv(a)
    aic = ai @ c
    m = l + k
    gstar = np.zeros((n, m, m))
    gstar[:, :l, :l] = ai
    gstar[:, :l, l:] = -aic
    gstar[:, l:, :l] = -np.swapaxes(aic, 1, 2)
    gstar[:, l:, l:] = np.eye(k) + np.einsum("nis,nit->nst", c, aic)
    sdet = np.sqrt(np.linalg.det(a))  # normal block is the identity
    return sdet, gstar


def _shift(geom, x, w, coord: int, delta: float):
    """Coordinates with one Fermi coordinate shifted by delta."""
    l = geom.submanifold_dim
    if coord < l:
        if l == 1:
            return x + delta, w
        x2 = np.array(x, copy=True)
        x2[:, coord] += delta
        return x2, w
    w2 = np.array(w, copy=True)
    w2[:, coord - l] += delta
    return x, w2


def _grad_logrho(geom, x, w, h):
    """4th-order central gradient of the log density; shape (N, m)."""
    m = geom.ambient_dim
    out = np.empty((np.asarray(w).shape[0], m))
    for K in range(m):
        vals = []
        for mult in (-2, -1, 1, 2):
            xs, ws = _shift(geom, x, w, K, mult * h)
            vals.append(geometry.log_density(geom, xs, ws))
        f_m2, f_m1, f_p1, f_p2 = vals
        out[:, K] = (f_m2 - 8 * f_m1 + 8 * f_p1 - f_p2) / (12 * h)
    return out


def _potential_values(geom, x, w, h):
    """W = (1/2) div-grad(log rho) - (1/4) |d log rho|^2 at the given points."""
    m = geom.ambient_dim
    sdet0, gstar0 = _dual_blocks(geom, x, w)
    grad0 = _grad_logrho(geom, x, w, h)

    div = 0.0
    for K in range(m):
        flux = []
        for mult in (-2, -1, 1, 2):
            xs, ws = _shift(geom, x, w, K, mult * h)
            sd, gs = _dual_blocks(geom, xs, ws)
            gr = _grad_logrho(geom, xs, ws, h)
            flux.append(sd * np.einsum("nl,nl->n", gs[:, K, :], gr))
        f_m2, f_m1, f_p1, f_p2 = flux
        div = div + (f_m2 - 8 * f_m1 + 8 * f_p1 - f_p2) / (12 * h)
    lap = div / sdet0
    quad = np.einsum("nk,nkl,nl->n", grad0, gstar0, grad0)
    return 0.5 * lap - 0.25 * quad


@dataclass(frozen=True)
class PotentialField:
    """Effective potential on the submanifold and on the surrounding tube.

    WL evaluates the closed-form limit potential; Wfull applies the metric
    divergence-gradient operator to the log density by nested 4th-order
    finite differences on the exact tube metric. alpha_floor is the shift
    lambda0 + sup max(-W_L, 0) that makes the shifted forms coercive.
    """

    geom: geometry.GeometrySpec
    alpha_floor: float
    step: float = FD_STEP

    def WL(self, x):
        return effective_potential(self.geom, x)

    def Wfull(self, x, w):
        arr, scalar = geometry._x_array(self.geom, x)
        wv = geometry._w_array(self.geom, w, arr.shape[0])
        try:
            out = _potential_values(self.geom, arr, wv, self.step)
        except ValidationError:
            # stencil left the tube: shrink once, then give up
            try:
                out = _potential_values(self.geom, arr, wv, self.step / 4)
            except ValidationError as exc:
                raise ValidationError(
                    "finite-difference stencil leaves the tube even after "
                    f"shrinking the step: {exc}"
                ) from exc
        return float(out[0]) if scalar else out

    def W_eps(self, x, w, eps: float):
        """Rescaled potential: Wfull evaluated at (x, eps * w)."""
        wv = np.asarray(w, dtype=float)
        return self.Wfull(x, eps * wv)


def potential_field(geom: geometry.GeometrySpec, x_samples) -> PotentialField:
    """Potential field with the coercivity shift taken over the given x grid."""
    arr, _ = geometry._x_array(geom, x_samples)
    wl = effective_potential(geom, arr)
    lam0 = ball_eigenvalue(geom.codim, 0)
    floor = lam0 + float(np.maximum(-wl, 0.0).max())
    return PotentialField(geom=geom, alpha_floor=floor)


# ---------------------------------------------------------------------------
# remainder orders


_QUANTITIES = ("metric", "logrho")


def _directions(codim: int) -> np.ndarray:
    if codim == 1:
        return np.array([[1.0], [-1.0]])
    ang = np.arange(8) * (math.pi / 4)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


def jet_remainder_slope(geom: geometry.GeometrySpec, x, quantity: str) -> float:
    """Log-log slope of the sup-norm jet remainder over a dyadic |w| ladder.

    Returns +inf when the jet reproduces the exact quantity to roundoff
    (polynomial cases); otherwise a finite slope, expected >= 2.7 for a
    second-order jet with cubic remainder.
    """
    if quantity not in _QUANTITIES:
        raise ValidationError(
            f"unknown remainder quantity {quantity!r}; choose from {_QUANTITIES}"
        )
    jet = metric_jet(geom, x)
    dirs = _directions(geom.codim)
    radii = geometry.eps_max(geom) * 2.0 ** -np.arange(3, 9)
    scale = 1.0 + float(np.abs(jet.a0).max())

    errs = []
    for s in radii:
        worst = 0.0
        for d in dirs:
            wvec = s * d
            a_j, c_j, b_j, lr_j = jet.evaluate(wvec)
            blocks = geometry.tube_blocks(geom, x, wvec)
            if quantity == "metric":
                diff = max(
                    float(np.abs(blocks.a - a_j).max()),
                    float(np.abs(blocks.c - c_j).max()),
                    float(np.abs(np.eye(geom.codim) - b_j).max()),
                )
            else:
                diff = abs(float(blocks.log_density) - lr_j)
            worst = max(worst, diff)
        errs.append(worst)
    errs = np.array(errs)

    if errs.max() <= 1e-11 * scale or errs.min() <= 0.0:
        return math.inf
    slope, _ = np.polyfit(np.log(radii), np.log(errs), 1)
    return float(slope)
