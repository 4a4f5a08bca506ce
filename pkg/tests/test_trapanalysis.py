import numpy as np
import pytest

from trapload.constants import RB87
from trapload.errors import NoBarrier, NotAMinimum, Unbounded
from trapload.potentials import (
    CallablePotential,
    HarmonicPotential,
    IoffePritchardPotential,
)
from trapload.trapanalysis import (
    AnalysisOptions,
    barrier_height,
    find_minimum,
    trap_depth,
    trap_frequencies,
    trough_profile,
)

from oracles import ioffe_pritchard_frequencies


IP = dict(B0=1.15e-4, Bp=1.4, Bpp=2.0)  # T, T/m, T/m^2: paper-scale trap


class TestFindMinimum:
    def test_harmonic_center(self):
        center = np.array([1e-4, -2e-4, 3e-4])
        pot = HarmonicPotential([2e3, 2.1e3, 40.0], center=center)
        found = find_minimum(pot, (0.0, 0.0, 0.0))
        assert np.linalg.norm(found - center) < 1e-9

    def test_ioffe_pritchard_origin(self):
        pot = IoffePritchardPotential(**IP)
        found = find_minimum(pot, (2e-4, -1e-4, 5e-4))
        assert np.linalg.norm(found) < 1e-9

    def test_deterministic(self):
        pot = IoffePritchardPotential(**IP)
        a = find_minimum(pot, (1e-4, 1e-4, 1e-4))
        b = find_minimum(pot, (1e-4, 1e-4, 1e-4))
        assert np.array_equal(a, b)

    def test_saddle_rejected(self):
        def U(pts):
            return pts[:, 0] ** 2 - pts[:, 1] ** 2 + pts[:, 2] ** 2

        pot = CallablePotential(U, fd_step=1e-6)
        from trapload.errors import NoConvergence, SaddleDetected

        with pytest.raises((SaddleDetected, NoConvergence)):
            find_minimum(pot, (1e-5, 0.0, 1e-5))


class TestFrequencies:
    def test_1d_harmonic(self):
        w = 2 * np.pi * 100.0
        pot = HarmonicPotential([w, 2 * np.pi * 250.0, 2 * np.pi * 10.0])
        omegas, axes = trap_frequencies(pot, np.zeros(3))
        assert omegas[0] == pytest.approx(2 * np.pi * 250.0, rel=1e-9)
        assert omegas[1] == pytest.approx(w, rel=1e-9)
        assert omegas[2] == pytest.approx(2 * np.pi * 10.0, rel=1e-9)
        assert np.allclose(axes @ axes.T, np.eye(3), atol=1e-12)

    def test_ioffe_pritchard_closed_form(self):
        pot = IoffePritchardPotential(**IP)
        w_rho_ref, w_z_ref = ioffe_pritchard_frequencies(
            IP["B0"], IP["Bp"], IP["Bpp"],
            moment=RB87.muB, mass=RB87.mass,
        )
        omegas, _ = trap_frequencies(pot, np.zeros(3), hessian_step=1e-6)
        assert abs(omegas[0] - w_rho_ref) / w_rho_ref < 1e-3
        assert abs(omegas[1] - w_rho_ref) / w_rho_ref < 1e-3
        assert abs(omegas[2] - w_z_ref) / w_z_ref < 1e-3

    def test_step_halving_stable(self):
        pot = IoffePritchardPotential(**IP)
        w1, _ = trap_frequencies(pot, np.zeros(3), hessian_step=2e-6)
        w2, _ = trap_frequencies(pot, np.zeros(3), hessian_step=1e-6)
        assert np.all(np.abs(w1 - w2) / w2 < 1e-3)

    def test_not_a_minimum(self):
        def U(pts):
            return pts[:, 0] ** 2 - 0.5 * pts[:, 1] ** 2 + pts[:, 2] ** 2

        pot = CallablePotential(U, fd_step=1e-6)
        with pytest.raises(NotAMinimum):
            trap_frequencies(pot, np.zeros(3))


class TestTrapDepth:
    def _options(self):
        return AnalysisOptions(box_radial=2e-3, box_axial=4e-3,
                               depth_rays=32, depth_slices=9, depth_steps=120)

    def test_clipped_harmonic_exact(self):
        U_max = RB87.kB * 500e-6
        w = 2 * np.pi * 150.0

        def U(pts):
            r2 = np.sum(pts**2, axis=1)
            return np.minimum(0.5 * RB87.mass * w**2 * r2, U_max)

        pot = CallablePotential(U, fd_step=1e-7)
        depth = trap_depth(pot, np.zeros(3), self._options())
        assert depth == pytest.approx(RB87.uK(U_max), rel=1e-6)

    def test_double_well_barrier(self):
        # minima at x = +-a with U = 0; saddle at x = 0 with height h
        a = 1e-3
        h = RB87.kB * 300e-6
        w = 2 * np.pi * 200.0

        def U(pts):
            x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
            return h * ((x / a) ** 2 - 1.0) ** 2 + 0.5 * RB87.mass * w**2 * (
                y**2 + z**2
            )

        pot = CallablePotential(U, fd_step=1e-7)
        opts = AnalysisOptions(box_radial=1.5e-3, box_axial=2.5e-3,
                               depth_rays=32, depth_slices=17, depth_steps=120)
        depth = trap_depth(pot, np.array([a, 0.0, 0.0]), opts)
        assert depth == pytest.approx(RB87.uK(h), rel=1e-3)

    def test_unbounded_harmonic(self):
        pot = HarmonicPotential([2e3, 2e3, 2e2])
        with pytest.raises(Unbounded):
            trap_depth(pot, np.zeros(3), self._options())

    def test_reproducible(self):
        U_max = RB87.kB * 400e-6
        w = 2 * np.pi * 120.0

        def U(pts):
            r2 = np.sum(pts**2, axis=1)
            return np.minimum(0.5 * RB87.mass * w**2 * r2, U_max)

        pot = CallablePotential(U, fd_step=1e-7)
        d1 = trap_depth(pot, np.zeros(3), self._options())
        d2 = trap_depth(pot, np.zeros(3), self._options())
        assert d1 == d2


class TestBarrierHeight:
    def test_monotone_ramp_no_barrier(self):
        def U(pts):
            return -1e-27 * pts[:, 0]

        pot = CallablePotential(U)
        path = np.column_stack([np.linspace(-5e-3, 5e-3, 100),
                                np.zeros(100), np.zeros(100)])
        with pytest.raises(NoBarrier):
            barrier_height(pot, path)

    def test_gaussian_bump(self):
        h = RB87.kB * 310e-6
        xb, wb = -2e-3, 5e-4

        def U(pts):
            x = pts[:, 0]
            return h * np.exp(-0.5 * ((x - xb) / wb) ** 2)

        pot = CallablePotential(U)
        path = np.column_stack([np.linspace(-8e-3, 0.0, 400),
                                np.zeros(400), np.zeros(400)])
        height, crest = barrier_height(pot, path)
        assert height == pytest.approx(310.0, rel=1e-3)
        assert abs(path[crest, 0] - xb) < 5e-5


class TestTroughAndScaling:
    def test_trough_follows_tilted_valley(self):
        # valley center moves linearly with s: trough must track it
        w = 2 * np.pi * 300.0
        slope = 0.05

        def U(pts):
            x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
            yc = slope * x
            return 0.5 * RB87.mass * w**2 * ((y - yc) ** 2 + z**2) + (
                0.5 * RB87.mass * (2 * np.pi * 10.0) ** 2 * x**2
            )

        pot = CallablePotential(U, fd_step=1e-7)
        s = np.linspace(-2e-3, 2e-3, 11)
        pts, Us = trough_profile(
            pot, np.zeros(3), np.array([1.0, 0, 0]),
            np.array([0, 1.0, 0]), np.array([0, 0, 1.0]), s, 2e-3,
        )
        assert np.allclose(pts[:, 1], slope * s, atol=2e-7)

    def test_current_scaling_scales_depth(self):
        # degree-1 homogeneous potential: depth and barrier scale with s,
        # frequencies^2 scale with s (checked via a linear |B|-like cone)
        U_max = RB87.kB * 200e-6
        grad = U_max / 1e-3

        def U_factory(scale):
            def U(pts):
                r = np.linalg.norm(pts, axis=1)
                return scale * np.minimum(grad * r, U_max)

            return U

        opts = AnalysisOptions(box_radial=2e-3, box_axial=2e-3,
                               depth_rays=16, depth_slices=5, depth_steps=100)
        d1 = trap_depth(CallablePotential(U_factory(1.0)), np.zeros(3), opts)
        d2 = trap_depth(CallablePotential(U_factory(2.0)), np.zeros(3), opts)
        assert d2 == pytest.approx(2.0 * d1, rel=1e-9)
