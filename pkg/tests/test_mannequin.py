import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from garmentspace.mannequin import (
    BODY_RANGES,
    BodyShape,
    PoseSpec,
    build_mannequin,
    sample_body,
    shrink_to_skeleton,
)


class TestBodyShape:
    def test_default_height_is_range_midpoint(self):
        # (1.45 + 1.95) / 2 = 1.70
        m = build_mannequin(BodyShape.default())
        assert m.measurements["height"] == pytest.approx(1.70, abs=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            BodyShape(np.full(10, 1.5))
        with pytest.raises(ValueError):
            BodyShape(np.zeros(9))

    def test_physical_uses_ranges(self):
        b = BodyShape(np.zeros(10))
        phys = b.physical()
        for (name, lo, hi), _ in zip(BODY_RANGES, range(10)):
            assert phys[name] == lo


class TestBuildMannequin:
    def test_deterministic(self):
        b = sample_body(3)
        m1 = build_mannequin(b)
        m2 = build_mannequin(b)
        for c1, c2 in zip(m1.capsules, m2.capsules):
            assert np.array_equal(c1.a, c2.a) and np.array_equal(c1.b, c2.b)
            assert c1.radius == c2.radius

    def test_sdf_at_offset_from_axis(self, default_mannequin):
        # pick the chest capsule, probe at radius + eps from the axis
        chest = [c for c in default_mannequin.capsules if c.name == "chest"][0]
        mid = (chest.a + chest.b) / 2
        eps = 0.01
        p = mid + np.array([0.0, 0.0, chest.radius + eps])
        assert default_mannequin.sdf(p) == pytest.approx(eps, abs=1e-6)

    def test_sdf_sign_inside(self, default_mannequin):
        chest = [c for c in default_mannequin.capsules if c.name == "chest"][0]
        mid = (chest.a + chest.b) / 2
        assert default_mannequin.sdf(mid) < 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_sdf_lipschitz(self, seed):
        rng = np.random.default_rng(seed)
        m = build_mannequin(BodyShape(rng.uniform(0, 1, 10)))
        p = rng.uniform([-1, 0, -1], [1, 2, 1], size=(32, 3))
        q = rng.uniform([-1, 0, -1], [1, 2, 1], size=(32, 3))
        dsd = np.abs(m.sdf(p) - m.sdf(q))
        dist = np.linalg.norm(p - q, axis=1)
        assert np.all(dsd <= dist + 1e-9)

    def test_chest_monotonicity(self):
        base = np.full(10, 0.5)
        lo = build_mannequin(BodyShape(base))
        hi_vec = base.copy()
        hi_vec[1] = 0.8
        hi = build_mannequin(BodyShape(hi_vec))
        assert hi.measurements["chest_circumference"] > lo.measurements["chest_circumference"]

    def test_gradient_is_unit_outward(self, default_mannequin):
        p = np.array([[0.5, 1.0, 0.3], [0.0, 1.9, 0.0]])
        g = default_mannequin.sdf_gradient(p)
        assert np.allclose(np.linalg.norm(g, axis=1), 1.0)


class TestShrink:
    def test_identity(self, default_mannequin):
        m = shrink_to_skeleton(default_mannequin, 1.0)
        for c1, c2 in zip(default_mannequin.capsules, m.capsules):
            assert c1.radius == c2.radius

    def test_halving(self, default_mannequin):
        m = shrink_to_skeleton(default_mannequin, 0.5)
        for c1, c2 in zip(default_mannequin.capsules, m.capsules):
            assert c2.radius == pytest.approx(c1.radius / 2, abs=0)
            assert np.array_equal(c1.a, c2.a)

    def test_factor_sweep_ends_at_original(self, default_mannequin):
        for f in np.linspace(0.1, 1.0, 10):
            m = shrink_to_skeleton(default_mannequin, float(f))
            for c1, c2 in zip(default_mannequin.capsules, m.capsules):
                assert c2.radius == pytest.approx(c1.radius * f, abs=1e-15)
        final = shrink_to_skeleton(default_mannequin, 1.0)
        for c1, c2 in zip(default_mannequin.capsules, final.capsules):
            assert abs(c1.radius - c2.radius) < 1e-9

    def test_rejects_bad_factor(self, default_mannequin):
        with pytest.raises(ValueError):
            shrink_to_skeleton(default_mannequin, 0.0)
        with pytest.raises(ValueError):
            shrink_to_skeleton(default_mannequin, 1.5)


class TestTessellate:
    def test_fixed_resolution_vertex_count(self):
        a = build_mannequin(sample_body(1)).tessellate()
        b = build_mannequin(sample_body(2)).tessellate()
        assert a[0].shape == b[0].shape  # comparable across bodies

    def test_vertices_near_surface(self, default_mannequin):
        v, _ = default_mannequin.tessellate()
        sd = default_mannequin.sdf(v)
        # tessellation points lie on single-capsule surfaces; union sdf <= 0
        assert sd.max() < 1e-9


class TestPose:
    def test_pose_changes_arms_only(self, default_body):
        rest = build_mannequin(default_body, PoseSpec.REST)
        target = build_mannequin(default_body, PoseSpec.TARGET)
        for cr, ct in zip(rest.capsules, target.capsules):
            if cr.name.startswith("arm"):
                assert not np.allclose(cr.b, ct.b)
            else:
                assert np.allclose(cr.a, ct.a) and np.allclose(cr.b, ct.b)
