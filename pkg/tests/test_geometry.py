"""Geometry catalog: finite-difference embedding oracles and frame invariants."""

import math

import numpy as np
import pytest
import scipy.integrate

from tubelab import geometry as geo
from tubelab.errors import ValidationError

FD_H = 1e-5


def wavy_curve(n=64, period=2 * math.pi):
    s = np.arange(n) * period / n
    return geo.plane_curve(1.0 + 0.3 * np.cos(2 * s), period)


def all_entries():
    return [
        geo.circle_in_plane(2.0),
        wavy_curve(),
        geo.plane_curve(np.zeros(8), 5.0),
        geo.space_curve(0.25),
        geo.space_curve(0.2, 0.3),
        geo.sphere_in_r3(1.5),
        geo.latitude_circle(1.1),
    ]


def sample_points(geom, n=5):
    axes = geo.x_axes(geom)
    if geom.submanifold_dim == 1:
        return np.linspace(0.1, axes[0].length * 0.93, n)
    th = np.linspace(0.4, math.pi - 0.4, n)
    ph = np.linspace(0.2, 2 * math.pi - 0.3, n)
    return np.stack([th, ph], axis=-1)


# --- factories / validation


def test_factory_validation():
    with pytest.raises(ValidationError):
        geo.circle_in_plane(0.0)
    with pytest.raises(ValidationError):
        geo.sphere_in_r3(-2.0)
    with pytest.raises(ValidationError):
        geo.latitude_circle(0.0)
    with pytest.raises(ValidationError):
        geo.latitude_circle(math.pi)
    with pytest.raises(ValidationError):
        geo.plane_curve([1.0, 2.0], 1.0)  # too few samples
    with pytest.raises(ValidationError):
        geo.space_curve(float("inf"))
    with pytest.raises(ValidationError):
        geo.space_curve(0.2, 0.6)  # winding too large


def test_open_curve_rejected():
    # constant nonzero curvature whose total turn is not a whole multiple of 2 pi
    s = np.arange(16) * 2 * math.pi / 16
    with pytest.raises(ValidationError, match="closure|close|turn"):
        geo.plane_curve(np.full(16, 0.7), 2 * math.pi)


def test_unknown_kind_rejected():
    bogus = geo.GeometrySpec("MoebiusBand", (1.0,))
    with pytest.raises(ValidationError):
        geo.curvature_at(bogus, 0.0)


def test_dimensions():
    for g in all_entries():
        assert g.codim in (1, 2)
        assert g.ambient_dim - g.submanifold_dim == g.codim
    assert geo.sphere_in_r3(1.0).submanifold_dim == 2
    assert geo.space_curve(0.1).codim == 2


# --- curvature payloads against closed forms pinned by independent oracles


def test_circle_curvature_values():
    cd = geo.curvature_at(geo.circle_in_plane(2.0), 0.7)
    assert abs(cd.weingarten[0, 0, 0]) == pytest.approx(0.5, abs=1e-12)
    assert cd.scal_sub == 0.0
    assert cd.tension_sq == pytest.approx(0.25, abs=1e-12)
    assert cd.scal_amb == cd.ric_normal == cd.scal_normal == 0.0


def test_sphere_curvature_values():
    cd = geo.curvature_at(geo.sphere_in_r3(1.0), [0.8, 2.0])
    # orientation-independent statements only; the chosen outward normal
    # makes the shape operator -Id/R
    assert abs(np.trace(cd.weingarten[0])) == pytest.approx(2.0, abs=1e-12)
    assert cd.tension_sq == pytest.approx(4.0, abs=1e-12)
    assert cd.scal_sub == pytest.approx(2.0, abs=1e-12)
    assert cd.scal_amb == 0.0


def test_equator_curvature_values():
    cd = geo.curvature_at(geo.latitude_circle(math.pi / 2), 0.3)
    assert cd.tension_sq == pytest.approx(0.0, abs=1e-24)
    assert cd.scal_amb == pytest.approx(2.0)
    assert cd.ric_normal == pytest.approx(1.0)
    assert cd.scal_normal == 0.0


def test_weingarten_fd_oracle_circle():
    # (d^2 gamma / ds^2) . nu = <A T, T> for arclength curves
    g = geo.circle_in_plane(2.0)
    s = np.array([0.25, 1.9, 4.4])
    e2 = (geo.embedding(g, s + FD_H) - 2 * geo.embedding(g, s)
          + geo.embedding(g, s - FD_H)) / FD_H**2
    nu = geo.normal_frame(g, s)[:, 0]
    a_fd = np.sum(e2 * nu, axis=-1)
    a = geo.shape_operators(g, s)[:, 0, 0, 0]
    assert np.allclose(a_fd, a, atol=1e-6)
    assert np.allclose(a, -0.5)


def test_weingarten_fd_oracle_plane_curve():
    g = wavy_curve()
    s = np.array([0.25, 2.1, 3.3, 5.5])
    e1 = (geo.embedding(g, s + FD_H) - geo.embedding(g, s - FD_H)) / (2 * FD_H)
    assert np.allclose(np.linalg.norm(e1, axis=-1), 1.0, atol=1e-9)
    e2 = (geo.embedding(g, s + FD_H) - 2 * geo.embedding(g, s)
          + geo.embedding(g, s - FD_H)) / FD_H**2
    nu = geo.normal_frame(g, s)[:, 0]
    kappa_fd = np.sum(e2 * nu, axis=-1)
    assert np.allclose(kappa_fd, geo.plane_curvature(g, s), atol=1e-5)
    assert np.allclose(geo.plane_curvature(g, s), 1.0 + 0.3 * np.cos(2 * s),
                       atol=1e-12)


def test_plane_curve_closure_is_spectrally_exact():
    st = geo._plane_state(wavy_curve())
    assert st["tangent_defect"] < 1e-12
    assert st["embed_defect"] < 1e-12
    assert st["turn"] == 1


def test_sphere_shape_operator_fd_oracle():
    g = geo.sphere_in_r3(1.5)
    x = np.array([[0.9, 1.3]])
    # normal derivative of the embedding along each chart direction:
    # d(nu)/dx^i = -A^j_i d(emb)/dx^j  for a symmetric shape operator
    for i in range(2):
        dx = np.zeros((1, 2))
        dx[0, i] = FD_H
        dnu = (geo.normal_frame(g, x + dx)[:, 0] -
               geo.normal_frame(g, x - dx)[:, 0]) / (2 * FD_H)
        demb = (geo.embedding(g, x + dx) - geo.embedding(g, x - dx)) / (2 * FD_H)
        A = geo.shape_operators(g, x)[0, 0]
        assert np.allclose(dnu, -A[i, i] * demb, atol=1e-7)


def test_space_curve_frame_transport_properties():
    g = geo.space_curve(0.2, 0.3)
    tr = geo.frame_transport(g)
    assert tr.closure_defect < 1e-10
    t = np.linspace(0.1, 2 * math.pi - 0.1, 9)
    fr = tr.frame_at(t)
    gram = np.einsum("nad,nbd->nab", fr, fr)
    assert np.allclose(gram, np.eye(2), atol=1e-12)
    tang = geo._space_tangent(g.params, t)
    assert np.abs(np.einsum("nad,nd->na", fr, tang)).max() < 1e-12
    # connection coefficient from the frame itself is the constant twist
    h = 1e-6
    dnu1 = (tr.frame_at(t + h)[:, 0] - tr.frame_at(t - h)[:, 0]) / (2 * h)
    c_fd = np.sum(dnu1 * fr[:, 1], axis=-1)
    assert np.allclose(c_fd, tr.twist_rate, atol=1e-8)


def test_space_curve_holonomy_matches_torsion_integral():
    # independent oracle: the minimizing frame rotates by minus the integral
    # of the Frenet torsion over one period (mod 2 pi)
    for params in [(0.25, 0.0), (0.2, 0.3), (0.15, -0.25)]:
        g = geo.space_curve(*params)

        def torsion_ds(t):
            g1, g2, g3 = (geo._space_gamma(g.params, np.array([t]), k)[0]
                          for k in (1, 2, 3))
            cr = np.cross(g1, g2)
            return np.dot(cr, g3) / np.dot(cr, cr) * np.linalg.norm(g1)

        total, _ = scipy.integrate.quad(torsion_ds, 0.0, 2 * math.pi, limit=200)
        expected = ((-total + math.pi) % (2 * math.pi)) - math.pi
        reported = geo.frame_transport(g).holonomy_angle
        assert reported == pytest.approx(expected, abs=1e-9)


def test_pinned_space_curve_has_no_twist():
    # the pure-height family is symmetric: torsion integrates to zero, the
    # minimizing frame closes by itself, connection coefficients vanish
    g = geo.space_curve(0.25)
    assert abs(geo.normal_twist(g)) < 1e-10
    conn = geo.normal_connection_field(g, np.linspace(0, 6, 7))
    assert np.abs(conn).max() < 1e-10


def test_planar_circle_in_r3_has_parallel_frame():
    g = geo.space_curve(0.0)
    assert abs(geo.normal_twist(g)) < 1e-12
    cd = geo.curvature_at(g, 0.9)
    assert np.abs(cd.normal_connection).max() < 1e-12
    # shape vector has unit length (curvature of the unit circle)
    assert np.hypot(cd.weingarten[0, 0, 0],
                    cd.weingarten[1, 0, 0]) == pytest.approx(1.0, abs=1e-10)


def test_twisted_space_curve_connection_antisymmetric_nonzero():
    g = geo.space_curve(0.2, 0.3)
    cd = geo.curvature_at(g, 1.7)
    c = cd.normal_connection[0]
    assert np.allclose(c, -c.T, atol=1e-14)
    assert abs(c[0, 1]) > 0.05


# --- exact tube metric


def test_tube_metric_zero_offset_is_exact():
    for g in all_entries():
        x = sample_points(g, 1)[0] if g.submanifold_dim == 2 else 0.7
        gm = geo.exact_tube_metric(g, x, np.zeros(g.codim))
        gl = geo.induced_metric(g, x)
        l, m = g.submanifold_dim, g.ambient_dim
        expect = np.zeros((m, m))
        expect[:l, :l] = gl
        expect[l:, l:] = np.eye(g.codim)
        assert np.array_equal(gm, expect)


def test_tube_metric_fd_oracle_all_euclidean_entries():
    # pushforward metric of Phi(x, w) = emb(x) + w^a nu_a(x) against blocks
    rng = np.random.default_rng(3)
    for g in all_entries():
        if g.kind == geo.LATITUDE_CIRCLE or g.submanifold_dim != 1:
            continue
        e = geo.eps_max(g)
        s = np.array([0.3, 1.1, 2.9])
        w = rng.uniform(-0.6, 0.6, (3, g.codim)) * e

        def phi(ss, ww):
            fr = geo.normal_frame(g, ss)
            return geo.embedding(g, ss) + np.einsum("na,nad->nd", ww, fr)

        d = (phi(s + FD_H, w) - phi(s - FD_H, w)) / (2 * FD_H)
        blocks = geo.tube_blocks(g, s, w)
        gtt = blocks.a[:, 0, 0] + np.sum(blocks.c[:, 0, :] ** 2, axis=-1)
        assert np.allclose(np.sum(d * d, axis=-1), gtt, atol=5e-9)
        # coupling row = <d_x Phi, nu_a>
        fr = geo.normal_frame(g, s)
        coup = np.einsum("nd,nad->na", d, fr)
        assert np.allclose(coup, blocks.c[:, 0, :], atol=5e-9)


def test_tube_metric_sphere_fd_oracle():
    g = geo.sphere_in_r3(1.5)
    x = np.array([[0.7, 1.2], [2.0, 4.6]])
    w = 0.33

    def phi(xx):
        return geo.embedding(g, xx) + w * geo.normal_frame(g, xx)[:, 0]

    blocks = geo.tube_blocks(g, x, np.full((2, 1), w))
    for i in range(2):
        dx = np.zeros((1, 2))
        dx[0, i] = FD_H
        d = (phi(x + dx) - phi(x - dx)) / (2 * FD_H)
        assert np.allclose(np.sum(d * d, axis=-1), blocks.a[:, i, i], atol=1e-8)
    assert np.allclose(blocks.log_density, 2 * math.log(1 + w / 1.5), atol=1e-14)


def test_tube_metric_latitude_band_closed_form():
    t0 = 1.1
    g = geo.latitude_circle(t0)
    w = np.array([[-0.3], [0.15], [0.4]])
    s = np.array([0.1, 2.0, 4.0])
    blocks = geo.tube_blocks(g, s, w)
    expect = (np.sin(t0 + w[:, 0]) / math.sin(t0)) ** 2
    assert np.allclose(blocks.a[:, 0, 0], expect, atol=1e-14)
    assert np.allclose(blocks.log_density, 0.5 * np.log(expect), atol=1e-14)


def test_density_positive_throughout_admissible_tube():
    rng = np.random.default_rng(11)
    for g in all_entries():
        e = geo.eps_max(g)
        xs = sample_points(g, 40)
        w = rng.uniform(-1, 1, (40, g.codim))
        w /= np.maximum(1.0, np.linalg.norm(w, axis=-1, keepdims=True))
        blocks = geo.tube_blocks(g, xs, w * e)
        assert np.all(np.isfinite(blocks.log_density))
        assert np.exp(blocks.log_density).min() > 0.0


def test_density_beyond_injectivity_rejected():
    g = geo.circle_in_plane(1.0)
    with pytest.raises(ValidationError):
        geo.tube_blocks(g, 0.0, np.array([-1.5]))


# --- frame covariance and Gauss identity


def _scalars_from_tensors(gl, weing, mixed):
    """tension², Gauss combination, and mixed-trace computed from raw tensors."""
    tension = sum(np.trace(a) ** 2 for a in weing)
    gauss = sum(np.trace(a) ** 2 - np.trace(a @ a) for a in weing)
    gli = np.linalg.inv(gl)
    mtrace = np.einsum("ij,iaja->", gli, mixed)
    return tension, gauss, mtrace


def test_reframing_invariance_of_scalars():
    rng = np.random.default_rng(5)
    for g in all_entries():
        x = sample_points(g, 1)[0] if g.submanifold_dim == 2 else 1.3
        cd = geo.curvature_at(g, x)
        gl, weing, mixed = cd.metric, cd.weingarten, cd.mixed_curvature
        base = _scalars_from_tensors(gl, weing, mixed)

        l, k = g.submanifold_dim, g.codim
        # orthonormalize the tangent, rotate both frames, map back
        lam, V = np.linalg.eigh(gl)
        S = V @ np.diag(np.sqrt(lam)) @ V.T  # gl^(1/2)
        Si = np.linalg.inv(S)
        for _ in range(4):
            Q = np.linalg.qr(rng.standard_normal((l, l)))[0]
            O = np.linalg.qr(rng.standard_normal((k, k)))[0]
            T = Si @ Q @ S  # isometric tangent re-frame in chart coordinates
            Ti = np.linalg.inv(T)
            weing2 = np.einsum("ab,bij->aij",
                               O, np.array([Ti @ A @ T for A in weing]))
            mixed2 = np.einsum("ip,aq,jr,bs,iqjs->parb", T, O, T, O, mixed)
            gl2 = T.T @ gl @ T
            got = _scalars_from_tensors(gl2, weing2, mixed2)
            for b, v in zip(base, got):
                assert v == pytest.approx(b, abs=1e-10, rel=1e-10)


def test_gauss_identity_on_catalog():
    for g in all_entries():
        x = sample_points(g, 1)[0] if g.submanifold_dim == 2 else 0.9
        cd = geo.curvature_at(g, x)
        gauss = sum(np.trace(a) ** 2 - np.trace(a @ a) for a in cd.weingarten)
        assert gauss == pytest.approx(cd.scal_sub - cd.scal_normal,
                                      abs=1e-10, rel=1e-10)


def test_weingarten_symmetric_under_metric():
    for g in all_entries():
        x = sample_points(g, 1)[0] if g.submanifold_dim == 2 else 2.2
        cd = geo.curvature_at(g, x)
        for A in cd.weingarten:
            bil = cd.metric @ A
            assert np.allclose(bil, bil.T, atol=1e-10 * (1 + np.abs(bil).max()))


def test_connection_antisymmetry():
    for g in all_entries():
        xs = sample_points(g, 6)
        conn = geo.normal_connection_field(g, xs)
        assert np.allclose(conn, -np.swapaxes(conn, -1, -2), atol=1e-12)


# --- chart layout


def test_axes_and_eps_max():
    g = geo.circle_in_plane(2.0)
    (ax,) = geo.x_axes(g)
    assert ax.periodic and ax.length == pytest.approx(4 * math.pi)
    assert geo.eps_max(g) == pytest.approx(0.5)  # capped

    th = geo.x_axes(geo.sphere_in_r3(1.0))
    assert not th[0].periodic and th[0].staggered
    assert th[1].periodic

    lat = geo.latitude_circle(1.1)
    assert geo.injectivity_bound(lat) == pytest.approx(1.1)
    assert geo.eps_max(lat) == pytest.approx(0.44)

    flat = geo.plane_curve(np.zeros(8), 5.0)
    assert geo.is_flat(flat)
    assert geo.eps_max(flat) == 0.5

    wav = wavy_curve()
    assert geo.eps_max(wav) == pytest.approx(0.4 / 1.3, rel=1e-9)


def test_geometry_from_config():
    g = geo.geometry_from_config({"kind": "SphereInR3", "radius": 2.0})
    assert g.kind == geo.SPHERE_IN_R3 and g.params == (2.0,)
    with pytest.raises(ValidationError):
        geo.geometry_from_config({"kind": "SphereInR3", "radius": 2.0, "x": 1})
    with pytest.raises(ValidationError):
        geo.geometry_from_config({"radius": 2.0})
    with pytest.raises(ValidationError):
        geo.geometry_from_config({"kind": "Cylinder"})
    g2 = geo.geometry_from_config(
        {"kind": "SpaceCurve", "height": 0.2, "winding": 0.3})
    assert geo.normal_twist(g2) != 0.0
