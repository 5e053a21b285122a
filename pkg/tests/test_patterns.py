import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from garmentspace.mannequin import BodyShape
from garmentspace.patterns import (
    DegeneratePanel,
    GarmentParams,
    GarmentType,
    PatternError,
    TriangulationFailure,
    PatternPanel,
    SeamTag,
    build_pattern_mesh,
    instantiate_pattern,
    panels_from_text,
    panels_to_text,
    param_count,
    sample_params,
    triangulate,
)

ALL_TYPES = list(GarmentType)


def mid_params(gtype):
    return GarmentParams(np.full(param_count(gtype), 0.5), np.full(3, 0.5))


class TestParamCount:
    def test_shirt(self):
        assert param_count(GarmentType.SHIRT) == 9

    def test_kimono(self):
        assert param_count(GarmentType.KIMONO) == 4

    def test_skirt(self):
        assert param_count(GarmentType.SKIRT) == 11


class TestSampleParams:
    def test_deterministic(self):
        a = sample_params(GarmentType.SHIRT, 7)
        b = sample_params(GarmentType.SHIRT, 7)
        assert np.array_equal(a.shape_dims, b.shape_dims)
        assert np.array_equal(a.material, b.material)

    def test_in_range(self):
        for seed in range(20):
            g = sample_params(GarmentType.SKIRT, seed)
            assert np.all(g.shape_dims >= 0) and np.all(g.shape_dims <= 1)
            assert np.all(g.material >= 0) and np.all(g.material <= 1)

    def test_coordinate_mean(self):
        # law of large numbers on one coordinate over 10k draws
        vals = np.array([sample_params(GarmentType.KIMONO, s).shape_dims[0] for s in range(10_000)])
        assert 0.48 <= vals.mean() <= 0.52


class TestInstantiate:
    def test_midpoint_waistline(self, default_body):
        # hand evaluation of the shipped range table at 0.5 on the default
        # body: (0.393+0.407)/2 + (0+0.006)/2 = 0.403, straight waist curve
        panels = instantiate_pattern(GarmentType.SKIRT, mid_params(GarmentType.SKIRT), default_body)
        for p in panels:
            waist = [t for t in p.pin_tags if t.label == "waist"][0]
            assert p.arc_length(waist) == pytest.approx(0.403, abs=1e-12)

    def test_height_scaling_linear(self, default_body):
        g = mid_params(GarmentType.SKIRT)
        base = instantiate_pattern(GarmentType.SKIRT, g, default_body)
        # height range [1.45,1.95]: t for 1.1x default (1.87) is 0.84
        taller = np.full(10, 0.5)
        taller[0] = (1.70 * 1.1 - 1.45) / (1.95 - 1.45)
        scaled = instantiate_pattern(GarmentType.SKIRT, g, BodyShape(taller))
        for pb, ps in zip(base, scaled):
            h0 = pb.boundary[:, 1].max() - pb.boundary[:, 1].min()
            h1 = ps.boundary[:, 1].max() - ps.boundary[:, 1].min()
            assert h1 == pytest.approx(1.1 * h0, rel=1e-9)
            w0 = pb.boundary[:, 0].max() - pb.boundary[:, 0].min()
            w1 = ps.boundary[:, 0].max() - ps.boundary[:, 0].min()
            assert w1 == pytest.approx(w0, rel=1e-9)

    def test_degenerate_panel(self, default_body):
        table = (
            ("waist_width", 0.0, 0.4, "w"),  # lo=0 collapses the waist at g=0
            ("hem_width", 0.45, 0.85, "h"),
            ("length", 0.35, 0.80, "v"),
            ("side_bow", 0.00, 0.06, "h"),
            ("flare_start", 0.30, 0.80, "u"),
            ("front_hem_curve", -0.05, 0.05, "v"),
            ("back_hem_curve", -0.05, 0.05, "v"),
            ("front_waist_curve", -0.04, 0.04, "v"),
            ("back_waist_curve", -0.04, 0.04, "v"),
            ("waist_ease", 0.00, 0.0, "w"),
            ("hem_tilt", -0.06, 0.06, "v"),
        )
        g = GarmentParams(np.zeros(11), np.full(3, 0.5))
        with pytest.raises(DegeneratePanel):
            instantiate_pattern(GarmentType.SKIRT, g, default_body, table=table)

    @settings(max_examples=12, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 10_000), st.sampled_from(ALL_TYPES))
    def test_seam_partners_match_length(self, gseed, bseed, gtype):
        g = sample_params(gtype, gseed)
        rng = np.random.default_rng(bseed)
        b = BodyShape(rng.uniform(0, 1, 10))
        panels = instantiate_pattern(gtype, g, b)
        by_name = {p.name: p for p in panels}
        for p in panels:
            for t in p.seam_tags:
                pname, plabel = t.partner.split(":")
                q = by_name[pname]
                qt = [s for s in q.seam_tags if s.label == plabel][0]
                la, lb = p.arc_length(t), q.arc_length(qt)
                assert abs(la - lb) <= 0.01 * max(la, lb)


def unit_square_panel():
    boundary = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return PatternPanel("square", boundary)


class TestTriangulate:
    def test_unit_square(self):
        mesh = triangulate(unit_square_panel(), target_edge=0.5, seed=0)
        nb = mesh.boundary_vertex_count
        bpts = mesh.vertices_2d[:nb]
        on_edge = (
            np.isclose(bpts, 0.0, atol=1e-12) | np.isclose(bpts, 1.0, atol=1e-12)
        ).any(axis=1)
        assert on_edge.all()
        assert 0.45 <= mesh.mean_edge_length() <= 0.55

    def test_too_small_panel(self):
        with pytest.raises(TriangulationFailure):
            triangulate(unit_square_panel(), target_edge=0.95, seed=0)

    def test_deterministic(self):
        a = triangulate(unit_square_panel(), target_edge=0.2, seed=3)
        b = triangulate(unit_square_panel(), target_edge=0.2, seed=3)
        assert np.array_equal(a.vertices_2d, b.vertices_2d)
        assert np.array_equal(a.triangles, b.triangles)

    def test_no_flipped_triangles(self, default_body):
        for gtype in ALL_TYPES:
            mesh = build_pattern_mesh(
                instantiate_pattern(gtype, mid_params(gtype), default_body), 0.035, seed=1
            )
            v = mesh.vertices_2d
            t = mesh.triangles
            e1, e2 = v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]
            area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            assert (area > 0).all()

    def test_mean_edge_within_tolerance(self, canonical_skirt_mesh):
        assert abs(canonical_skirt_mesh.mean_edge_length() - 0.035) <= 0.1 * 0.035


class TestPatternMesh:
    def test_seam_vertex_uniqueness(self, default_body):
        for gtype in ALL_TYPES:
            mesh = build_pattern_mesh(
                instantiate_pattern(gtype, mid_params(gtype), default_body), 0.035, seed=0
            )
            flat = mesh.seam_vertex_pairs.ravel()
            assert len(flat) == len(np.unique(flat))

    def test_seam_pairs_indices_valid(self, canonical_skirt_mesh):
        m = canonical_skirt_mesh
        assert m.seam_vertex_pairs.min() >= 0
        assert m.seam_vertex_pairs.max() < len(m.vertices_2d)


class TestSerialization:
    def test_round_trip(self, default_body):
        panels = instantiate_pattern(GarmentType.SHIRT, mid_params(GarmentType.SHIRT), default_body)
        text = panels_to_text(panels)
        loaded = panels_from_text(text)
        assert [p.name for p in loaded] == [p.name for p in panels]
        for a, b in zip(panels, loaded):
            assert np.allclose(a.boundary, b.boundary, atol=1e-10)
            assert a.seam_tags == b.seam_tags
            assert a.pin_tags == b.pin_tags

    def test_rejects_bad_header(self):
        with pytest.raises(PatternError):
            panels_from_text("something else\n")
