"""Catalog of submanifolds with exact tube geometry.

Each entry knows its induced metric, shape operators, normal connection,
the ambient curvature blocks that feed the two-term metric expansion, and
the exact metric of the surrounding tube in normal coordinates.  Exactness
is the point: downstream expansions and discretizations are checked against
closed forms here instead of against themselves.

Conventions used throughout:

* Normal coordinates w are Cartesian components in the chosen normal frame;
  the tube point is exp_x(w^alpha nu_alpha).
* Shape operators are mixed-index, S_alpha = -(d nu_alpha)^tangential, so a
  circle of radius R with outward normal has S = -1/R.
* Curvature sign: R(X, Y, X, Y) = +K |X|^2|Y|^2 for orthonormal X, Y on a
  sphere of curvature K > 0.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ValidationError

CIRCLE_IN_PLANE = "CircleInPlane"
PLANE_CURVE = "PlaneCurve"
SPACE_CURVE = "SpaceCurve"
SPHERE_IN_R3 = "SphereInR3"
LATITUDE_CIRCLE = "LatitudeCircleOnSphere"

_KINDS = (
    CIRCLE_IN_PLANE,
    PLANE_CURVE,
    SPACE_CURVE,
    SPHERE_IN_R3,
    LATITUDE_CIRCLE,
)

_THETA_MARGIN = 1e-6
_TANGENT_CLOSURE_TOL = 1e-8
_EMBED_CLOSURE_TOL = 1e-6
_FRAME_CLOSURE_TOL = 1e-8


def catalog_kinds() -> tuple[str, ...]:
    return _KINDS


@dataclass(frozen=True)
class GeometrySpec:
    """Immutable description of one catalog entry.

    params layout by kind:
      CircleInPlane:          (radius,)
      PlaneCurve:             (period, k_0, ..., k_{n-1})  curvature samples on a
                              uniform parameter grid, trigonometric interpolation
      SpaceCurve:             (height,)  for t -> (cos t, sin t, height*sin 2t)
      SphereInR3:             (radius,)
      LatitudeCircleOnSphere: (theta0,)  polar angle on the unit sphere
    """

    kind: str
    params: tuple

    @property
    def submanifold_dim(self) -> int:
        return 2 if self.kind == SPHERE_IN_R3 else 1

    @property
    def ambient_dim(self) -> int:
        if self.kind in (CIRCLE_IN_PLANE, PLANE_CURVE, LATITUDE_CIRCLE):
            return 2
        return 3

    @property
    def codim(self) -> int:
        return self.ambient_dim - self.submanifold_dim

    def __repr__(self) -> str:  # compact, param-first
        inner = ", ".join(f"{p:g}" for p in self.params[:4])
        if len(self.params) > 4:
            inner += f", ... ({len(self.params) - 1} curvature samples)"
        return f"{self.kind}({inner})"


@dataclass(frozen=True)
class Axis:
    """One coordinate axis of the submanifold chart.

    staggered axes place nodes at (j + 1/2) h with no endpoint node; the open
    end cells are left uncovered and act as natural boundaries.
    """

    length: float
    periodic: bool
    staggered: bool = False


@dataclass(frozen=True)
class CurvatureData:
    """Pointwise curvature payload for the two-term tube expansion.

    Index conventions (l = submanifold dim, k = codim):
      weingarten[alpha]            (l, l) mixed-index shape operator
      normal_connection[i, a, s]   <d_i nu_a, nu_s>
      mixed_curvature[i, a, j, b]  ambient R(e_i, nu_a, e_j, nu_b), coordinate
                                   tangents, orthonormal normals
      normal_curvature[m, a, s, b] ambient R(nu_m, nu_a, nu_s, nu_b)
    """

    metric: np.ndarray
    weingarten: np.ndarray
    normal_connection: np.ndarray
    mixed_curvature: np.ndarray
    normal_curvature: np.ndarray
    scal_sub: float
    scal_amb: float
    ric_normal: float
    scal_normal: float

    @property
    def tension_sq(self) -> float:
        return float(sum(np.trace(a) ** 2 for a in self.weingarten))


# ---------------------------------------------------------------------------
# factories


def circle_in_plane(radius: float) -> GeometrySpec:
    r = float(radius)
    if not math.isfinite(r) or r <= 0:
        raise ValidationError(f"circle radius must be positive, got {radius!r}")
    return GeometrySpec(CIRCLE_IN_PLANE, (r,))


def plane_curve(curvature_samples, period: float) -> GeometrySpec:
    p = float(period)
    k = tuple(float(v) for v in curvature_samples)
    if not math.isfinite(p) or p <= 0:
        raise ValidationError(f"curve period must be positive, got {period!r}")
    if len(k) < 4:
        raise ValidationError("need at least 4 curvature samples")
    if not all(math.isfinite(v) for v in k):
        raise ValidationError("curvature samples must be finite")
    geom = GeometrySpec(PLANE_CURVE, (p,) + k)
    if not is_flat(geom):
        st = _plane_state(geom)
        if st["tangent_defect"] > _TANGENT_CLOSURE_TOL:
            raise ValidationError(
                "curvature does not integrate to a whole turn: tangent closure "
                f"defect {st['tangent_defect']:.3e} exceeds {_TANGENT_CLOSURE_TOL:g}"
            )
        if st["embed_defect"] > _EMBED_CLOSURE_TOL * p:
            raise ValidationError(
                f"curve endpoint gap {st['embed_defect']:.3e} exceeds "
                f"{_EMBED_CLOSURE_TOL:g} of the period; curve does not close"
            )
    return geom


def space_curve(height: float, winding: float = 0.0) -> GeometrySpec:
    """Closed curve t -> ((1+a cos 2t) cos t, (1+a cos 2t) sin t, h sin 2t).

    height = h lifts the curve out of the plane; winding = a modulates the
    radius and is what gives the normal frame a nonzero holonomy (the pure
    height family has none: its torsion integrates to zero by symmetry).
    """
    h = float(height)
    a = float(winding)
    if not math.isfinite(h):
        raise ValidationError(f"space curve height must be finite, got {height!r}")
    if not math.isfinite(a) or abs(a) > 0.45:
        raise ValidationError(
            f"space curve winding must satisfy |a| <= 0.45, got {winding!r}"
        )
    return GeometrySpec(SPACE_CURVE, (h, a))


def sphere_in_r3(radius: float) -> GeometrySpec:
    r = float(radius)
    if not math.isfinite(r) or r <= 0:
        raise ValidationError(f"sphere radius must be positive, got {radius!r}")
    return GeometrySpec(SPHERE_IN_R3, (r,))


def latitude_circle(theta0: float) -> GeometrySpec:
    t = float(theta0)
    if not (_THETA_MARGIN < t < math.pi - _THETA_MARGIN):
        raise ValidationError(
            f"latitude polar angle must lie in ({_THETA_MARGIN:g}, "
            f"pi - {_THETA_MARGIN:g}), got {theta0!r}"
        )
    return GeometrySpec(LATITUDE_CIRCLE, (t,))


def geometry_from_config(section) -> GeometrySpec:
    """Build a GeometrySpec from a parsed config mapping (already TOML-decoded)."""
    if "kind" not in section:
        raise ValidationError("geometry section needs a 'kind' key")
    kind = section["kind"]
    keys = set(section) - {"kind"}
    if kind == CIRCLE_IN_PLANE:
        allowed = {"radius"}
        spec = lambda: circle_in_plane(section.get("radius", 1.0))
    elif kind == PLANE_CURVE:
        allowed = {"curvature", "period"}
        if "curvature" not in section:
            raise ValidationError("PlaneCurve needs a 'curvature' sample list")
        spec = lambda: plane_curve(
            section["curvature"], section.get("period", 2 * math.pi)
        )
    elif kind == SPACE_CURVE:
        allowed = {"height", "winding"}
        spec = lambda: space_curve(
            section.get("height", 0.2), section.get("winding", 0.0)
        )
    elif kind == SPHERE_IN_R3:
        allowed = {"radius"}
        spec = lambda: sphere_in_r3(section.get("radius", 1.0))
    elif kind == LATITUDE_CIRCLE:
        allowed = {"theta0"}
        spec = lambda: latitude_circle(section.get("theta0", math.pi / 3))
    else:
        raise ValidationError(
            f"unknown geometry kind {kind!r}; choose one of {', '.join(_KINDS)}"
        )
    extra = keys - allowed
    if extra:
        raise ValidationError(
            f"unknown geometry keys for {kind}: {sorted(extra)}"
        )
    return spec()


# ---------------------------------------------------------------------------
# shape normalization helpers


def _check_kind(geom: GeometrySpec) -> None:
    if geom.kind not in _KINDS:
        raise ValidationError(
            f"unsupported geometry kind {geom.kind!r}; "
            f"known kinds: {', '.join(_KINDS)}"
        )
    if not all(math.isfinite(p) for p in geom.params):
        raise ValidationError("geometry parameters must be finite")


def _x_array(geom: GeometrySpec, x) -> tuple[np.ndarray, bool]:
    """Normalize x to (N,) for curves or (N, 2) for the sphere."""
    a = np.asarray(x, dtype=float)
    if geom.submanifold_dim == 1:
        scalar = a.ndim == 0
        a = np.atleast_1d(a)
        if a.ndim != 1:
            raise ValidationError(f"expected scalar or 1-d x, got shape {a.shape}")
        return a, scalar
    scalar = a.ndim == 1
    a = np.atleast_2d(a)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValidationError(f"expected x of shape (N, 2), got {a.shape}")
    return a, scalar


def _w_array(geom: GeometrySpec, w, n: int) -> np.ndarray:
    a = np.asarray(w, dtype=float)
    k = geom.codim
    if a.ndim == 0:
        if k != 1:
            raise ValidationError("scalar w only valid in codimension 1")
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        if k == 1:
            a = a.reshape(-1, 1)
        else:
            if a.shape[0] != k:
                raise ValidationError(f"expected w with {k} components")
            a = a.reshape(1, k)
    if a.ndim != 2 or a.shape[1] != k:
        raise ValidationError(f"expected w of shape (N, {k}), got {a.shape}")
    if a.shape[0] == 1 and n > 1:
        a = np.broadcast_to(a, (n, k))
    if a.shape[0] != n:
        raise ValidationError(
            f"x and w describe different point counts: {n} vs {a.shape[0]}"
        )
    return a


# ---------------------------------------------------------------------------
# plane curve internals (trigonometric interpolation of sampled curvature)


def _half_spectrum(samples: np.ndarray) -> np.ndarray:
    """Normalized rfft coefficients c_m such that
    f(s) = Re(c_0) + sum_{m>=1} 2 Re(c_m exp(i m w s)); a Nyquist coefficient
    is pre-halved so the same rule applies to it."""
    n = len(samples)
    c = np.fft.rfft(samples) / n
    if n % 2 == 0:
        c[-1] *= 0.5
    return c


def _trig_eval(coeff: np.ndarray, omega: float, s: np.ndarray) -> np.ndarray:
    m = np.arange(len(coeff))
    phase = np.exp(1j * np.outer(np.asarray(s, dtype=float), m) * omega)
    vals = phase @ (2.0 * coeff)
    return vals.real - coeff[0].real


def _trig_antiderivative(coeff: np.ndarray, omega: float) -> np.ndarray:
    """Coefficients of the zero-mean antiderivative of the oscillatory part."""
    out = np.zeros_like(coeff)
    m = np.arange(1, len(coeff))
    out[1:] = coeff[1:] / (1j * m * omega)
    return out


def _truncate(coeff: np.ndarray, rel: float = 1e-15) -> np.ndarray:
    mags = np.abs(coeff)
    top = mags.max() if len(mags) else 0.0
    if top == 0.0:
        return coeff[:1]
    keep = np.nonzero(mags > rel * top)[0]
    return coeff[: keep[-1] + 1]


@functools.lru_cache(maxsize=64)
def _plane_state(geom: GeometrySpec) -> dict:
    period = geom.params[0]
    samples = np.array(geom.params[1:], dtype=float)
    omega = 2 * math.pi / period
    ck = _half_spectrum(samples)

    kbar = ck[0].real
    winding = kbar * period / (2 * math.pi)
    turn = round(winding)
    tangent_defect = abs(kbar * period - 2 * math.pi * turn)

    # heading theta(s) = kbar s + oscillatory antiderivative of kappa
    theta_osc = _trig_antiderivative(ck, omega)

    nf = 4096
    while nf < 8 * len(samples):
        nf *= 2
    sf = np.arange(nf) * (period / nf)
    theta_f = kbar * sf + _trig_eval(theta_osc, omega, sf)

    # tangent components as two real series; their means measure closure
    ctx = _truncate(_half_spectrum(np.cos(theta_f)))
    cty = _truncate(_half_spectrum(np.sin(theta_f)))
    tangent_mean = complex(ctx[0].real, cty[0].real)
    embed_defect = abs(tangent_mean) * period

    return {
        "omega": omega,
        "kappa_coeff": _truncate(ck),
        "theta_osc": _truncate(theta_osc),
        "kbar": kbar,
        "turn": turn,
        "tangent_defect": tangent_defect,
        "tangent_mean": tangent_mean,
        "gamma_x_osc": _truncate(_trig_antiderivative(ctx, omega)),
        "gamma_y_osc": _truncate(_trig_antiderivative(cty, omega)),
        "embed_defect": embed_defect,
        "max_kappa": float(np.max(np.abs(_trig_eval(_truncate(ck), omega, sf)))),
    }


def plane_curvature(geom: GeometrySpec, s) -> np.ndarray:
    """Signed curvature of a PlaneCurve at parameter values s."""
    if geom.kind != PLANE_CURVE:
        raise ValidationError("plane_curvature only applies to PlaneCurve")
    st = _plane_state(geom)
    arr, scalar = _x_array(geom, s)
    out = _trig_eval(st["kappa_coeff"], st["omega"], arr)
    return out[0] if scalar else out


def is_flat(geom: GeometrySpec) -> bool:
    """True for the degenerate straight-tube entry (identically zero curvature)."""
    if geom.kind != PLANE_CURVE:
        return False
    return all(abs(v) <= 1e-14 for v in geom.params[1:])


# ---------------------------------------------------------------------------
# space curve internals (rotation-minimizing frame plus constant twist closure)


def _space_gamma(params: tuple, t: np.ndarray, order: int = 0) -> np.ndarray:
    """Curve point or exact t-derivative of any order.

    The horizontal part in complex form is e^{it} + (a/2)(e^{3it} + e^{-it}),
    so derivatives are exact multiplications by (ik)^order.
    """
    h, a = params
    t = np.asarray(t, dtype=float)
    z = np.zeros(t.shape, dtype=complex)
    for coeff, k in ((1.0, 1), (a / 2, 3), (a / 2, -1)):
        z = z + coeff * (1j * k) ** order * np.exp(1j * k * t)
    zc = h * 2.0**order * np.sin(2 * t + order * math.pi / 2)
    return np.stack([z.real, z.imag, zc], axis=-1)


def _space_tangent(params: tuple, t: np.ndarray) -> np.ndarray:
    g1 = _space_gamma(params, t, 1)
    return g1 / np.linalg.norm(g1, axis=-1, keepdims=True)


@dataclass(frozen=True)
class FrameTransport:
    """Globally periodic orthonormal normal frame field.

    For the space curve it is built by integrating the rotation-minimizing
    transport equation over one period and absorbing the holonomy into a
    constant-rate rotation, so the frame closes up and the normal connection
    coefficient is the constant twist_rate.  Every other catalog entry has a
    canonical normal frame with no twist.
    """

    geom: GeometrySpec
    twist_rate: float
    holonomy_angle: float
    closure_defect: float
    _coeff: tuple | None  # complex half-spectra of the components of nu1

    def frame_at(self, t) -> np.ndarray:
        """Orthonormal normal frame at parameter t; shape (N, k, m)."""
        if self._coeff is None:
            return normal_frame(self.geom, np.atleast_1d(np.asarray(t, float)))
        arr = np.atleast_1d(np.asarray(t, dtype=float))
        tan = _space_tangent(self.geom.params, arr)
        omega = 1.0  # period 2 pi in t
        nu1 = np.stack(
            [_trig_eval(np.asarray(c), omega, arr) for c in self._coeff], axis=-1
        )
        # defensive cleanup: remove interpolation drift along the tangent
        nu1 -= np.sum(nu1 * tan, axis=-1, keepdims=True) * tan
        nu1 /= np.linalg.norm(nu1, axis=-1, keepdims=True)
        nu2 = np.cross(tan, nu1)
        return np.stack([nu1, nu2], axis=1)


def frame_transport(geom: GeometrySpec, x_grid=None):
    """Periodic normal frame field; with x_grid, its samples there.

    Only the space curve needs actual transport; the trivial entries return
    their canonical frames with zero twist and zero closure defect.
    """
    ft = _frame_transport_cached(geom)
    if x_grid is None:
        return ft
    return ft.frame_at(x_grid)


@functools.lru_cache(maxsize=32)
def _frame_transport_cached(geom: GeometrySpec) -> FrameTransport:
    _check_kind(geom)
    if geom.kind != SPACE_CURVE:
        return FrameTransport(
            geom=geom, twist_rate=0.0, holonomy_angle=0.0,
            closure_defect=0.0, _coeff=None,
        )
    pr = geom.params

    def tangent_rate(t):
        g1 = _space_gamma(pr, np.asarray(t), 1)
        g2 = _space_gamma(pr, np.asarray(t), 2)
        n2 = np.sum(g1 * g1, axis=-1, keepdims=True)
        return (g2 - g1 * np.sum(g1 * g2, axis=-1, keepdims=True) / n2) / np.sqrt(n2)

    def rhs(t, y):
        tan = _space_tangent(pr, np.array([t]))[0]
        tp = tangent_rate(np.array([t]))[0]
        return -np.dot(y, tp) * tan

    n_samp = 2048
    t_eval = np.linspace(0.0, 2 * math.pi, n_samp + 1)
    tan0 = _space_tangent(pr, np.array([0.0]))[0]
    nu0 = np.array([1.0, 0.0, 0.0])  # orthogonal to gamma'(0) = (0, 1, 2h)
    nu0 -= np.dot(nu0, tan0) * tan0
    nu0 /= np.linalg.norm(nu0)
    sol = solve_ivp(
        rhs, (0.0, 2 * math.pi), nu0, method="DOP853",
        t_eval=t_eval, rtol=1e-12, atol=1e-14,
    )
    if not sol.success:
        raise ValidationError(f"frame transport integration failed: {sol.message}")
    nu1 = sol.y.T
    tan = _space_tangent(pr, t_eval)
    nu1 -= np.sum(nu1 * tan, axis=-1, keepdims=True) * tan
    nu1 /= np.linalg.norm(nu1, axis=-1, keepdims=True)
    nu2 = np.cross(tan, nu1)

    phi = math.atan2(float(np.dot(nu1[-1], nu2[0])), float(np.dot(nu1[-1], nu1[0])))
    beta = -phi * t_eval / (2 * math.pi)
    cb, sb = np.cos(beta)[:, None], np.sin(beta)[:, None]
    nu1c = cb * nu1 + sb * nu2
    defect = float(np.linalg.norm(nu1c[-1] - nu1c[0]))
    if defect > _FRAME_CLOSURE_TOL:
        raise ValidationError(
            f"transported frame failed to close: defect {defect:.3e}"
        )
    coeff = tuple(
        tuple(_truncate(_half_spectrum(nu1c[:-1, i]), rel=1e-14))
        for i in range(3)
    )
    return FrameTransport(
        geom=geom,
        twist_rate=-phi / (2 * math.pi),
        holonomy_angle=phi,
        closure_defect=defect,
        _coeff=coeff,
    )


def normal_twist(geom: GeometrySpec) -> float:
    """Rotation rate of the normal frame about the curve; zero off the space curve."""
    if geom.kind == SPACE_CURVE:
        return frame_transport(geom).twist_rate
    return 0.0


def _space_shape_vector(geom: GeometrySpec, t: np.ndarray) -> np.ndarray:
    """Per-point (A_1, A_2) with a(t, w) = gL (1 - A . w)^2; shape (N, 2)."""
    tr = frame_transport(geom)
    frames = tr.frame_at(t)
    g2 = _space_gamma(geom.params, t, 2)
    g1 = _space_gamma(geom.params, t, 1)
    gl = np.sum(g1 * g1, axis=-1)
    return np.einsum("nad,nd->na", frames, g2) / gl[:, None]


# ---------------------------------------------------------------------------
# induced metric, shape operators, connection


def induced_metric(geom: GeometrySpec, x) -> np.ndarray:
    """Induced metric gL at x in chart coordinates; shape (N, l, l)."""
    _check_kind(geom)
    arr, scalar = _x_array(geom, x)
    l = geom.submanifold_dim
    n = arr.shape[0]
    if geom.kind == SPHERE_IN_R3:
        r = geom.params[0]
        out = np.zeros((n, 2, 2))
        out[:, 0, 0] = r * r
        out[:, 1, 1] = (r * np.sin(arr[:, 0])) ** 2
    elif geom.kind == SPACE_CURVE:
        g1 = _space_gamma(geom.params, arr, 1)
        out = np.sum(g1 * g1, axis=-1).reshape(n, 1, 1)
    else:
        out = np.ones((n, 1, 1))
    return out[0] if scalar else out


def shape_operators(geom: GeometrySpec, x) -> np.ndarray:
    """Mixed-index shape operators; shape (N, k, l, l)."""
    _check_kind(geom)
    arr, scalar = _x_array(geom, x)
    n = arr.shape[0]
    k, l = geom.codim, geom.submanifold_dim
    out = np.zeros((n, k, l, l))
    if geom.kind == CIRCLE_IN_PLANE:
        out[:, 0, 0, 0] = -1.0 / geom.params[0]
    elif geom.kind == PLANE_CURVE:
        out[:, 0, 0, 0] = plane_curvature(geom, arr)
    elif geom.kind == SPACE_CURVE:
        av = _space_shape_vector(geom, arr)
        out[:, 0, 0, 0] = av[:, 0]
        out[:, 1, 0, 0] = av[:, 1]
    elif geom.kind == SPHERE_IN_R3:
        out[:, 0, 0, 0] = -1.0 / geom.params[0]
        out[:, 0, 1, 1] = -1.0 / geom.params[0]
    else:  # latitude circle, outward normal +d/dtheta
        out[:, 0, 0, 0] = -1.0 / math.tan(geom.params[0])
    return out[0] if scalar else out


def normal_connection_field(geom: GeometrySpec, x) -> np.ndarray:
    """Connection coefficients <d_i nu_a, nu_s>; shape (N, l, k, k)."""
    _check_kind(geom)
    arr, scalar = _x_array(geom, x)
    n = arr.shape[0]
    k, l = geom.codim, geom.submanifold_dim
    out = np.zeros((n, l, k, k))
    if geom.kind == SPACE_CURVE:
        c = normal_twist(geom)
        out[:, 0, 0, 1] = c
        out[:, 0, 1, 0] = -c
    return out[0] if scalar else out


def _ambient_scalars(geom: GeometrySpec) -> tuple[float, float, float, float]:
    """(scal_sub, scal_amb, ric_normal, scal_normal), constants on each entry."""
    if geom.kind == SPHERE_IN_R3:
        r = geom.params[0]
        return 2.0 / (r * r), 0.0, 0.0, 0.0
    if geom.kind == LATITUDE_CIRCLE:
        return 0.0, 2.0, 1.0, 0.0
    return 0.0, 0.0, 0.0, 0.0


def curvature_at(geom: GeometrySpec, x) -> CurvatureData:
    """Full curvature payload at a single point."""
    _check_kind(geom)
    arr, _ = _x_array(geom, x)
    if arr.shape[0] != 1:
        raise ValidationError("curvature_at takes a single point")
    k, l = geom.codim, geom.submanifold_dim
    mixed = np.zeros((l, k, l, k))
    if geom.kind == LATITUDE_CIRCLE:
        mixed[0, 0, 0, 0] = 1.0  # unit sphere sectional curvature, gL = 1
    scal_sub, scal_amb, ric_normal, scal_normal = _ambient_scalars(geom)
    return CurvatureData(
        metric=induced_metric(geom, arr)[0],
        weingarten=shape_operators(geom, arr)[0],
        normal_connection=normal_connection_field(geom, arr)[0],
        mixed_curvature=mixed,
        normal_curvature=np.zeros((k, k, k, k)),
        scal_sub=scal_sub,
        scal_amb=scal_amb,
        ric_normal=ric_normal,
        scal_normal=scal_normal,
    )


# ---------------------------------------------------------------------------
# exact tube metric


@dataclass(frozen=True)
class TubeBlocks:
    """Exact tube metric in normal coordinates, in block form.

    g = [[a + c c^T, c], [c^T, I_k]] with a the (l, l) tangential block and
    c the (l, k) coupling row; log_density is log of the fiber density
    sqrt(det g / det gL).
    """

    a: np.ndarray
    c: np.ndarray
    log_density: np.ndarray
    sqrt_det_induced: np.ndarray


def tube_blocks(geom: GeometrySpec, x, w) -> TubeBlocks:
    _check_kind(geom)
    arr, scalar = _x_array(geom, x)
    n = arr.shape[0]
    wv = _w_array(geom, w, n)
    k, l = geom.codim, geom.submanifold_dim

    c = np.zeros((n, l, k))
    if geom.kind == CIRCLE_IN_PLANE:
        rho = 1.0 + wv[:, 0] / geom.params[0]
        a = rho.reshape(n, 1, 1) ** 2
        sdet = np.ones(n)
    elif geom.kind == PLANE_CURVE:
        rho = 1.0 - wv[:, 0] * plane_curvature(geom, arr)
        a = rho.reshape(n, 1, 1) ** 2
        sdet = np.ones(n)
    elif geom.kind == SPACE_CURVE:
        av = _space_shape_vector(geom, arr)
        gl = induced_metric(geom, arr)[:, 0, 0]
        rho = 1.0 - np.sum(av * wv, axis=-1)
        a = (gl * rho * rho).reshape(n, 1, 1)
        tw = normal_twist(geom)
        c[:, 0, 0] = -tw * wv[:, 1]
        c[:, 0, 1] = tw * wv[:, 0]
        sdet = np.sqrt(gl)
    elif geom.kind == SPHERE_IN_R3:
        r = geom.params[0]
        scale = 1.0 + wv[:, 0] / r
        rho = scale * scale
        a = induced_metric(geom, arr) * rho.reshape(n, 1, 1)
        sdet = r * r * np.abs(np.sin(arr[:, 0]))
    else:  # latitude circle
        t0 = geom.params[0]
        rho = np.sin(t0 + wv[:, 0]) / math.sin(t0)
        a = rho.reshape(n, 1, 1) ** 2
        sdet = np.ones(n)

    if np.any(rho <= 0):
        raise ValidationError(
            "normal coordinate leaves the tube (metric degenerates); "
            "reduce the tube radius"
        )
    blocks = TubeBlocks(
        a=a, c=c, log_density=np.log(rho), sqrt_det_induced=sdet
    )
    if scalar:
        return TubeBlocks(a[0], c[0], blocks.log_density[0], sdet[0])
    return blocks


def log_density(geom: GeometrySpec, x, w) -> np.ndarray:
    """log of the tube volume density relative to the product measure."""
    return tube_blocks(geom, x, w).log_density


def exact_tube_metric(geom: GeometrySpec, x, w) -> np.ndarray:
    """Full (m, m) tube metric at one point, chart x normal-frame w coordinates."""
    arr, _ = _x_array(geom, x)
    if arr.shape[0] != 1:
        raise ValidationError("exact_tube_metric takes a single point")
    b = tube_blocks(geom, arr, w)
    a, c = b.a[0], b.c[0]
    k, l, m = geom.codim, geom.submanifold_dim, geom.ambient_dim
    g = np.zeros((m, m))
    g[:l, :l] = a + c @ c.T
    g[:l, l:] = c
    g[l:, :l] = c.T
    g[l:, l:] = np.eye(k)
    return g


# ---------------------------------------------------------------------------
# embeddings and normals (Euclidean entries; latitude uses chart components)


def embedding(geom: GeometrySpec, x) -> np.ndarray:
    """Position of submanifold points in ambient Cartesian coordinates.

    Not available for the latitude circle, whose ambient space is the round
    sphere described intrinsically.
    """
    _check_kind(geom)
    arr, scalar = _x_array(geom, x)
    if geom.kind == CIRCLE_IN_PLANE:
        r = geom.params[0]
        t = arr / r
        out = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    elif geom.kind == PLANE_CURVE:
        st = _plane_state(geom)
        gx = st["tangent_mean"].real * arr + _trig_eval(
            st["gamma_x_osc"], st["omega"], arr)
        gy = st["tangent_mean"].imag * arr + _trig_eval(
            st["gamma_y_osc"], st["omega"], arr)
        out = np.stack([gx, gy], axis=-1)
    elif geom.kind == SPACE_CURVE:
        out = _space_gamma(geom.params, arr)
    elif geom.kind == SPHERE_IN_R3:
        r = geom.params[0]
        th, ph = arr[:, 0], arr[:, 1]
        out = np.stack(
            [r * np.sin(th) * np.cos(ph), r * np.sin(th) * np.sin(ph),
             r * np.cos(th)], axis=-1,
        )
    else:
        raise ValidationError(
            "the latitude circle lives on an abstract sphere; no Euclidean "
            "embedding is exposed"
        )
    return out[0] if scalar else out


def normal_frame(geom: GeometrySpec, x) -> np.ndarray:
    """Normal frame vectors, shape (N, k, m).

    Components are ambient Cartesian for the Euclidean entries and chart
    components (theta, phi) for the latitude circle.
    """
    _check_kind(geom)
    arr, scalar = _x_array(geom, x)
    n = arr.shape[0]
    if geom.kind == CIRCLE_IN_PLANE:
        t = arr / geom.params[0]
        out = np.stack([np.cos(t), np.sin(t)], axis=-1).reshape(n, 1, 2)
    elif geom.kind == PLANE_CURVE:
        st = _plane_state(geom)
        theta = st["kbar"] * arr + _trig_eval(st["theta_osc"], st["omega"], arr)
        # Frenet normal: tangent rotated a quarter turn counterclockwise
        out = np.stack([-np.sin(theta), np.cos(theta)], axis=-1).reshape(n, 1, 2)
    elif geom.kind == SPACE_CURVE:
        out = frame_transport(geom).frame_at(arr)
    elif geom.kind == SPHERE_IN_R3:
        th, ph = arr[:, 0], arr[:, 1]
        out = np.stack(
            [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)],
            axis=-1,
        ).reshape(n, 1, 3)
    else:  # latitude: unit vector along +d/dtheta in chart components
        out = np.tile(np.array([[1.0, 0.0]]), (n, 1)).reshape(n, 1, 2)
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# chart layout, injectivity, flatness


def x_axes(geom: GeometrySpec) -> tuple[Axis, ...]:
    """Chart axes the submanifold grid is built on."""
    _check_kind(geom)
    if geom.kind == CIRCLE_IN_PLANE:
        return (Axis(2 * math.pi * geom.params[0], True),)
    if geom.kind == PLANE_CURVE:
        return (Axis(geom.params[0], True),)
    if geom.kind == SPACE_CURVE:
        return (Axis(2 * math.pi, True),)
    if geom.kind == SPHERE_IN_R3:
        return (Axis(math.pi, False, staggered=True), Axis(2 * math.pi, True))
    return (Axis(2 * math.pi * math.sin(geom.params[0]), True),)


def injectivity_bound(geom: GeometrySpec) -> float:
    """Largest tube radius with a nondegenerate normal coordinate chart."""
    _check_kind(geom)
    if geom.kind == CIRCLE_IN_PLANE or geom.kind == SPHERE_IN_R3:
        return geom.params[0]
    if geom.kind == PLANE_CURVE:
        if is_flat(geom):
            return math.inf
        return 1.0 / _plane_state(geom)["max_kappa"]
    if geom.kind == SPACE_CURVE:
        t = np.linspace(0.0, 2 * math.pi, 4097)
        g1 = _space_gamma(geom.params, t, 1)
        g2 = _space_gamma(geom.params, t, 2)
        speed = np.linalg.norm(g1, axis=-1)
        kappa = np.linalg.norm(np.cross(g1, g2), axis=-1) / speed**3
        return 1.0 / float(np.max(kappa))
    t0 = geom.params[0]
    return min(t0, math.pi - t0)


def eps_max(geom: GeometrySpec) -> float:
    """Largest admissible tube half-width for studies on this entry."""
    return min(0.4 * injectivity_bound(geom), 0.5)
