import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from femtosim.errors import InvalidParameterError, InvalidTopologyError
from femtosim.model import (DeploymentType, Fap, MacroCell, Point2D, SubBand, Topology, Ue,
                            femto_ref)
from femtosim.radio import RadioParams, best_server, received_power
from femtosim.topology import (bounding_box, build_macro_cluster, neighbors_within, place_faps,
                               place_ues, uniform_disc)


def test_cluster_has_three_bands_once():
    cells = build_macro_cluster(500)
    assert len(cells) == 3
    assert sorted(c.subband.value for c in cells) == ["A", "B", "C"]


@pytest.mark.parametrize("r", [1.0, 500.0, 2500.0])
def test_cluster_first_cell_at_origin(r):
    c = build_macro_cluster(r)[0]
    assert (c.center.x, c.center.y) == (0.0, 0.0)


def test_inter_site_distance():
    a, b, c = build_macro_cluster(500)
    for p, q in [(a, b), (b, c), (a, c)]:
        assert p.center.distance_to(q.center) == pytest.approx(866.03, abs=0.01)


@pytest.mark.parametrize("r", [0.0, -3.0])
def test_cluster_rejects_bad_radius(r):
    with pytest.raises(InvalidParameterError):
        build_macro_cluster(r)


def test_place_faps_empty_and_bounded():
    m = build_macro_cluster(1000)[0]
    assert place_faps(m, 0, 42) == []
    faps = place_faps(m, 1000, 42)
    assert len(faps) == 1000
    assert all(f.position.distance_to(m.center) <= m.radius for f in faps)
    assert all(f.overlay_macro == m.id for f in faps)


def test_place_faps_deterministic():
    m = build_macro_cluster(300)[1]
    a = [f.position for f in place_faps(m, 50, 9)]
    b = [f.position for f in place_faps(m, 50, 9)]
    c = [f.position for f in place_faps(m, 50, 10)]
    assert a == b and a != c


def test_uniform_disc_is_area_uniform():
    rng = np.random.default_rng(0)
    xy = uniform_disc(rng, 200_000, (0.0, 0.0), 1.0)
    r = np.hypot(xy[:, 0], xy[:, 1])
    # P(r <= 1/2) = 1/4 for area-uniform sampling
    assert np.mean(r <= 0.5) == pytest.approx(0.25, abs=0.005)


def test_place_ues_empty_and_inside():
    macros = build_macro_cluster(800)
    topo = Topology(macros, [], [], DeploymentType.TYPE_C)
    assert place_ues(topo, 0, 7) == []
    ues = place_ues(topo, 100, 7)
    assert all(any(m.contains(u.position) for m in macros) for u in ues)


def test_place_ues_empty_topology():
    # bypass validation to get a topology with nothing in it
    topo = object.__new__(Topology)
    topo.macros, topo.faps, topo.ues, topo.deployment_type = [], [], [], DeploymentType.TYPE_C
    with pytest.raises(InvalidTopologyError):
        place_ues(topo, 3, 1)


def test_ue_on_fap_attaches_to_it():
    macros = build_macro_cluster(1000)
    fap = Fap(0, Point2D(400.0, 0.0), 1, None, 10.0, csg_list=frozenset({0}))
    topo = Topology(macros, [fap], [], DeploymentType.TYPE_C)
    ue = Ue(0, Point2D(400.0, 0.0))
    params = RadioParams()
    powers = {ref: received_power(ref, ue.position, topo, params) for ref in topo.station_refs()}
    assert best_server(ue, topo, params) == femto_ref(0) == max(powers, key=powers.get)


def test_place_ues_typea_inside_fap_disc():
    fap = Fap(0, Point2D(5.0, 5.0), None, None, 10.0, csg_list=frozenset(range(30)))
    topo = Topology([], [fap], [], DeploymentType.TYPE_A)
    ues = place_ues(topo, 30, 4)
    assert all(u.position.distance_to(fap.position) <= 20.0 + 1e-9 for u in ues)
    assert all(u.attachment == femto_ref(0) for u in ues)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rng_m=st.floats(0, 400))
def test_neighbors_match_brute_force(seed, rng_m):
    m = MacroCell(1, Point2D(0, 0), 300.0, SubBand.A, 46.0)
    faps = place_faps(m, 50, seed)
    topo = Topology([m], faps, [], DeploymentType.TYPE_C)
    p = Point2D(37.0, -12.0)
    brute = sorted((math.dist((f.position.x, f.position.y), (p.x, p.y)), f.id) for f in faps)
    expect = [i for d, i in brute if d <= rng_m]
    assert neighbors_within(topo, p, rng_m) == expect


def test_neighbors_trivial_ranges():
    m = MacroCell(1, Point2D(0, 0), 300.0, SubBand.A, 46.0)
    faps = place_faps(m, 20, 3)
    topo = Topology([m], faps, [], DeploymentType.TYPE_C)
    assert neighbors_within(topo, Point2D(1e6, 1e6), 0.0) == []
    assert sorted(neighbors_within(topo, Point2D(0, 0), math.inf)) == [f.id for f in faps]


def test_topology_invariants():
    fap = Fap(0, Point2D(0, 0), None, None, 10.0)
    Topology([], [fap], [], DeploymentType.TYPE_A)
    with pytest.raises(InvalidTopologyError):
        Topology([], [fap, Fap(1, Point2D(5, 0), None, None, 10.0)], [], DeploymentType.TYPE_A)
    with pytest.raises(InvalidTopologyError):
        Topology([], [fap], [], DeploymentType.TYPE_B)
    with pytest.raises(InvalidTopologyError):
        Topology([], [fap], [], DeploymentType.TYPE_C)


def test_bounding_box_covers_cluster():
    topo = Topology(build_macro_cluster(100), [], [], DeploymentType.TYPE_C)
    xmin, ymin, xmax, ymax = bounding_box(topo)
    assert xmin == pytest.approx(-100) and ymin == pytest.approx(-100)
    assert xmax == pytest.approx(math.sqrt(3) * 100 + 100)
