import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trapload.constants import GAUSS, RB87
from trapload.errors import ConfigError, CoreRegion, UntrappableState
from trapload.magnetics import (
    ChipLayout,
    CurrentSetting,
    FieldMap,
    GridSpec,
    SpinState,
    WireSegment,
    fd_gradient_hessian,
    field_map,
    potential_gradient_hessian,
    segment_field,
    total_field,
    total_field_and_jacobian,
    zeeman_potential,
    ZeemanSystem,
)

from oracles import biot_savart_quadrature


def random_layout(rng, n_segments=10, scale=0.02):
    segs = []
    for i in range(n_segments):
        a = rng.uniform(-scale, scale, 3)
        b = a + rng.uniform(0.2 * scale, scale, 3) * rng.choice([-1.0, 1.0], 3)
        segs.append(WireSegment(tuple(a), tuple(b), channel=f"c{i % 3}"))
    return ChipLayout(segs)


def random_safe_point(rng, layout, scale=0.02, min_dist=2e-3):
    from trapload.magnetics import core_violations

    while True:
        p = rng.uniform(-1.5 * scale, 1.5 * scale, 3)
        starts, ends, _ = layout.segment_arrays()
        d = np.linalg.norm(
            p[None, :] - 0.5 * (starts + ends), axis=1
        )
        if np.all(d > min_dist) and not core_violations(layout, p[None, :])[0]:
            return p


class TestSegmentField:
    def test_infinite_wire_limit(self):
        # L/d = 4000: truncation error below 1e-6 relative of mu0*I/(2pi*d)
        seg = WireSegment((-10.0, 0.0, 0.0), (10.0, 0.0, 0.0), "w")
        B = segment_field(seg, 100.0, (0.0, 0.0, 5e-3))
        Bmag = np.linalg.norm(B)
        assert abs(Bmag - 4.000e-3) / 4.000e-3 < 1e-6
        # perpendicular to both the wire (x) and the separation (z)
        assert abs(B[0]) < 1e-18
        assert abs(B[2]) < 1e-18
        # right-hand rule: current +x, point above in z -> field along -y
        assert B[1] < 0.0

    def test_zero_current(self):
        seg = WireSegment((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), "w")
        B = segment_field(seg, 0.0, (0.3, 0.2, 0.1))
        assert np.all(B == 0.0)

    def test_collinear_beyond_end(self):
        seg = WireSegment((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), "w")
        B = segment_field(seg, 50.0, (2.0, 0.0, 0.0))
        assert np.allclose(B, 0.0, atol=1e-300)

    def test_core_region_raises(self):
        seg = WireSegment((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), "w")
        with pytest.raises(CoreRegion):
            segment_field(seg, 10.0, (0.5, 0.0, 5e-6))
        # same distance but foot beyond the end: allowed
        B = segment_field(seg, 10.0, (1.5, 0.0, 5e-6))
        assert np.all(np.isfinite(B))

    def test_matches_quadrature_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            a = rng.uniform(-0.05, 0.05, 3)
            b = a + rng.uniform(-0.05, 0.05, 3)
            if np.linalg.norm(b - a) < 1e-3:
                continue
            seg = WireSegment(tuple(a), tuple(b), "w")
            # keep the point a few core radii off the wire line
            p = rng.uniform(-0.08, 0.08, 3)
            mid = 0.5 * (a + b)
            if np.linalg.norm(p - mid) < 2e-3:
                p = p + 5e-3
            I = rng.uniform(-120.0, 120.0)
            try:
                B = segment_field(seg, I, p)
            except CoreRegion:
                continue
            B_ref = biot_savart_quadrature(a, b, I, p)
            scale = max(np.linalg.norm(B_ref), 1e-30)
            assert np.linalg.norm(B - B_ref) / scale < 1e-10


class TestTotalField:
    def test_antiparallel_pair_midpoint(self):
        # equal and opposite currents: on the mid-plane the components along
        # the inter-wire axis cancel, magnitude doubles one wire's transverse part
        segs = [
            WireSegment((-5.0, -1e-2, 0.0), (5.0, -1e-2, 0.0), "a"),
            WireSegment((5.0, 1e-2, 0.0), (-5.0, 1e-2, 0.0), "b"),
        ]
        layout = ChipLayout(segs)
        I = CurrentSetting({"a": 30.0, "b": 30.0})
        p = np.array([0.0, 0.0, 0.0])
        B = total_field(layout, I, p)
        B_one = segment_field(segs[0], 30.0, p)
        assert abs(B[1]) < 1e-18
        assert np.isclose(np.linalg.norm(B), 2.0 * np.linalg.norm(B_one), rtol=1e-12)

    def test_empty_channel_bias_identity(self):
        seg = WireSegment((0.0, 0.0, 1.0), (1.0, 0.0, 1.0), "w")
        layout = ChipLayout([seg])
        I = CurrentSetting({"w": 0.0})
        bias = np.array([1e-4, -2e-4, 3e-4])
        B = total_field(layout, I, (5.0, 5.0, 5.0), bias=bias)
        assert np.allclose(B, bias, rtol=0, atol=1e-22)

    def test_matches_quadrature_on_random_layout(self):
        rng = np.random.default_rng(11)
        layout = random_layout(rng)
        currents = CurrentSetting({c: rng.uniform(-100, 100) for c in layout.channels})
        p = random_safe_point(rng, layout)
        B = total_field(layout, currents, p)
        B_ref = np.zeros(3)
        seg_I = layout.segment_currents(currents)
        for seg, I in zip(layout.segments, seg_I):
            B_ref += biot_savart_quadrature(seg.start, seg.end, I, p)
        assert np.linalg.norm(B - B_ref) / np.linalg.norm(B_ref) < 1e-10

    def test_superposition_reordering(self):
        rng = np.random.default_rng(42)
        layout = random_layout(rng, n_segments=14)
        currents = CurrentSetting({c: rng.uniform(-80, 80) for c in layout.channels})
        p = random_safe_point(rng, layout)
        B1 = total_field(layout, currents, p)
        order = rng.permutation(len(layout.segments))
        shuffled = ChipLayout([layout.segments[i] for i in order])
        B2 = total_field(shuffled, currents, p)
        assert np.linalg.norm(B1 - B2) <= 1e-12 * np.linalg.norm(B1)

    def test_linearity_in_currents(self):
        rng = np.random.default_rng(3)
        layout = random_layout(rng)
        currents = CurrentSetting({c: rng.uniform(-40, 40) for c in layout.channels})
        p = random_safe_point(rng, layout)
        B1 = total_field(layout, currents, p)
        B3 = total_field(layout, currents.scaled(3.0), p)
        assert np.allclose(B3, 3.0 * B1, rtol=1e-15, atol=0)

    def test_divergence_free(self):
        rng = np.random.default_rng(8)
        layout = random_layout(rng)
        currents = CurrentSetting({c: rng.uniform(-90, 90) for c in layout.channels})
        h = 2e-6
        for _ in range(5):
            p = random_safe_point(rng, layout, min_dist=3e-3)
            J = np.empty((3, 3))
            for ax in range(3):
                dp = np.zeros(3)
                dp[ax] = h
                J[:, ax] = (
                    total_field(layout, currents, p + dp)
                    - total_field(layout, currents, p - dp)
                ) / (2 * h)
            div = abs(np.trace(J))
            assert div < 1e-6 * np.linalg.norm(J)

    def test_far_field_decay(self):
        seg = WireSegment((0.0, 0.0, 0.0), (0.01, 0.0, 0.0), "w")
        layout = ChipLayout([seg])
        I = CurrentSetting({"w": 60.0})
        L = 0.01
        direction = np.array([0.3, 0.8, 0.52])
        direction /= np.linalg.norm(direction)
        r = 200.0 * L
        p = np.array(seg.start) + 0.5 * np.array([L, 0, 0]) + r * direction
        B = total_field(layout, I, p)
        Lvec = np.array([L, 0.0, 0.0])
        asym = RB87.mu0 * 60.0 * np.linalg.norm(np.cross(Lvec, direction)) / (
            4.0 * np.pi * r**2
        )
        assert abs(np.linalg.norm(B) - asym) / asym < 0.01

    def test_missing_channel_rejected(self):
        layout = ChipLayout([WireSegment((0, 0, 0), (1, 0, 0), "w")])
        with pytest.raises(ConfigError):
            total_field(layout, CurrentSetting({"other": 1.0}), (0, 0, 1))

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
    def test_linearity_property(self, scale, seed):
        rng = np.random.default_rng(seed)
        layout = random_layout(rng, n_segments=4)
        currents = CurrentSetting({c: rng.uniform(-10, 10) for c in layout.channels})
        p = random_safe_point(rng, layout)
        B1 = total_field(layout, currents, p)
        B2 = total_field(layout, currents.scaled(scale), p)
        assert np.allclose(B2, scale * B1, rtol=1e-13, atol=1e-25)


class TestJacobian:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        layout = random_layout(rng)
        currents = CurrentSetting({c: rng.uniform(-70, 70) for c in layout.channels})
        h = 1e-6
        for _ in range(6):
            p = random_safe_point(rng, layout)
            _, J = total_field_and_jacobian(layout, currents, p[None, :])
            J = J[0]
            J_fd = np.empty((3, 3))
            for ax in range(3):
                dp = np.zeros(3)
                dp[ax] = h
                J_fd[:, ax] = (
                    total_field(layout, currents, p + dp)
                    - total_field(layout, currents, p - dp)
                ) / (2 * h)
            assert np.linalg.norm(J - J_fd) / np.linalg.norm(J_fd) < 1e-6

    def test_trace_free(self):
        rng = np.random.default_rng(6)
        layout = random_layout(rng)
        currents = CurrentSetting({c: rng.uniform(-70, 70) for c in layout.channels})
        p = random_safe_point(rng, layout)
        _, J = total_field_and_jacobian(layout, currents, p[None, :])
        assert abs(np.trace(J[0])) < 1e-10 * np.linalg.norm(J[0])


class TestZeeman:
    def test_offset_field_energy(self):
        # 1.15 G in the stretched F=2 state: 77.2 uK
        B = np.array([0.0, 0.0, 1.15 * GAUSS])
        U = zeeman_potential(B, SpinState(2, 2, 0.5), RB87, gravity=False)
        assert abs(RB87.uK(U) - 77.2) < 0.05

    def test_zero_field(self):
        U = zeeman_potential(np.zeros(3), SpinState(2, 2, 0.5), RB87, gravity=False)
        assert U == 0.0

    def test_f1_state(self):
        B = np.array([1.0 * GAUSS, 0.0, 0.0])
        U = zeeman_potential(B, SpinState(1, -1, -0.5), RB87, gravity=False)
        assert abs(RB87.uK(U) - 33.6) < 0.05

    def test_untrappable(self):
        with pytest.raises(UntrappableState):
            zeeman_potential(np.ones(3), SpinState(2, -2, 0.5), RB87, gravity=False)

    def test_monotone_in_field(self):
        spin = SpinState(2, 2, 0.5)
        mags = np.linspace(0, 5e-4, 20)
        U = [
            zeeman_potential(np.array([0.0, 0.0, m]), spin, RB87, gravity=False)
            for m in mags
        ]
        assert np.all(np.diff(U) > 0)


class TestGradientHessian:
    def test_quadratic_exact(self):
        # central differences are exact on quadratics up to rounding
        A = np.array([[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 3.0]])
        b = np.array([0.5, -1.0, 2.0])

        def U(pts):
            return 0.5 * np.einsum("ni,ij,nj->n", pts, A, pts) + pts @ b

        p = np.array([0.3, -0.7, 1.1])
        grad, hess = fd_gradient_hessian(U, p, step=0.05)
        assert np.allclose(grad, A @ p + b, rtol=1e-8)
        assert np.allclose(hess, A, rtol=1e-8)

    def test_richardson_self_consistency(self):
        rng = np.random.default_rng(12)
        layout = random_layout(rng)
        currents = CurrentSetting({c: rng.uniform(-60, 60) for c in layout.channels})
        system = ZeemanSystem(layout, currents, gravity=False)
        p = random_safe_point(rng, layout)
        g1, _ = potential_gradient_hessian(system, p, step=2e-6)
        g2, _ = potential_gradient_hessian(system, p, step=1e-6)
        # fourth-order Richardson residual must be tiny vs the gradient itself
        assert np.linalg.norm(g1 - g2) < 1e-6 * np.linalg.norm(g2) + 1e-40

    def test_gradient_matches_exact_jacobian_form(self):
        rng = np.random.default_rng(13)
        layout = random_layout(rng)
        currents = CurrentSetting({c: rng.uniform(-60, 60) for c in layout.channels})
        system = ZeemanSystem(layout, currents, gravity=True)
        p = random_safe_point(rng, layout)
        g_fd = system.gradient(p, step=1e-6)
        g_an = system.gradient_exact(p)
        assert np.linalg.norm(g_fd - g_an) < 1e-6 * np.linalg.norm(g_an)

    def test_uniform_bias_gravity_gradient(self):
        layout = ChipLayout([WireSegment((0, 0, 10.0), (1, 0, 10.0), "w")])
        system = ZeemanSystem(
            layout, CurrentSetting({"w": 0.0}), gravity=True,
            bias=(0.0, 0.0, 2e-4),
        )
        grad, _ = potential_gradient_hessian(system, (0.0, 0.0, 0.0), step=1e-5)
        expect = np.array([0.0, 0.0, RB87.mass * RB87.gravity])
        assert np.allclose(grad, expect, rtol=1e-9, atol=1e-30)

    def test_step_bounds(self):
        layout = ChipLayout([WireSegment((0, 0, 1.0), (1, 0, 1.0), "w")])
        system = ZeemanSystem(layout, CurrentSetting({"w": 1.0}))
        with pytest.raises(ValueError):
            potential_gradient_hessian(system, (0, 0, 0), step=1e-3)


class TestFieldMap:
    def _system(self):
        segs = [
            WireSegment((-0.05, -2e-3, 0.0), (0.05, -2e-3, 0.0), "a"),
            WireSegment((-0.05, 2e-3, 0.0), (0.05, 2e-3, 0.0), "a"),
        ]
        layout = ChipLayout(segs)
        return ZeemanSystem(layout, CurrentSetting({"a": 40.0}), gravity=False)

    def test_single_point_grid(self):
        system = self._system()
        grid = GridSpec((0.0, 0.0, -3e-3), (0.0, 0.0, -3e-3), (1, 1, 1))
        fmap = field_map(system, grid)
        B = total_field(system.layout, system.currents, (0.0, 0.0, -3e-3))
        assert np.allclose(fmap.B[0], B)
        assert fmap.rows().shape == (1, 8)

    def test_mirror_symmetry(self):
        system = self._system()
        grid = GridSpec((-1e-2, 0.0, -4e-3), (1e-2, 0.0, -1e-3), (21, 1, 7))
        fmap = field_map(system, grid)
        mag = fmap.Bmag_G.reshape(21, 1, 7)
        assert np.allclose(mag, mag[::-1], rtol=1e-12, equal_nan=True)

    def test_core_samples_masked(self):
        system = self._system()
        grid = GridSpec((-1e-3, -2e-3, 0.0), (1e-3, -2e-3, 0.0), (3, 1, 1))
        fmap = field_map(system, grid)
        assert fmap.masked.all()
        assert np.isnan(fmap.Bmag_G).all()


class TestChipFieldMap:
    def test_saddle_between_entrance_and_minimum(self):
        # x-z map through the trap: the potential floor along x must show
        # an entrance barrier (interior max) upstream of the trap minimum
        from trapload.layouts import build_default_layout

        layout, currents = build_default_layout()
        system = ZeemanSystem(layout, currents)
        grid = GridSpec((-8e-3, -0.41e-3, -5.4e-3),
                        (20e-3, -0.41e-3, -2.6e-3), (201, 1, 201))
        fmap = field_map(system, grid)
        U = fmap.U_uK.reshape(201, 201)
        floor = np.nanmin(U, axis=1)          # min over z per x column
        i_min = int(np.argmin(floor))
        x = np.linspace(-8e-3, 20e-3, 201)
        assert 5e-3 < x[i_min] < 19e-3        # trap minimum downstream
        upstream = floor[: i_min + 1]
        i_crest = int(np.argmax(upstream))
        assert 0 < i_crest < i_min            # interior crest: the barrier
        assert upstream[i_crest] > floor[0] + 50.0
        assert upstream[i_crest] > floor[i_min] + 50.0


class TestArgminScaling:
    def test_scaling_keeps_minimum_location(self):
        # degree-1 homogeneity in currents (gravity off): |B| argmin invariant
        rng = np.random.default_rng(20)
        layout = random_layout(rng, n_segments=6)
        currents = CurrentSetting({c: rng.uniform(-50, 50) for c in layout.channels})
        pts = rng.uniform(-0.01, 0.01, size=(500, 3))
        from trapload.magnetics import core_violations

        ok = ~core_violations(layout, pts)
        pts = pts[ok]
        B1 = np.linalg.norm(total_field(layout, currents, pts), axis=1)
        B2 = np.linalg.norm(total_field(layout, currents.scaled(2.5), pts), axis=1)
        assert np.argmin(B1) == np.argmin(B2)
