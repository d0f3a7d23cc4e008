import random

import pytest

import oracles
from conftest import BASE_LAT, BASE_LON, chain_xml, offset_point, osm_xml, random_osm
from ldm.errors import MalformedDocument, UnknownNode
from ldm.geo import haversine_m
from ldm.model import ElementKind, LdmLayer
from ldm.roadnet import map_match, next_nodes, parse_osm, load_into_store
from ldm.store import LdmStore


def simple_triangle():
    nodes = [(1, BASE_LAT, BASE_LON)]
    lat2, lon2 = offset_point(100.0, 0.0)
    lat3, lon3 = offset_point(200.0, 50.0)
    nodes += [(2, lat2, lon2), (3, lat3, lon3)]
    return osm_xml(nodes, [(10, [1, 2, 3], {"highway": "residential"})])


class TestParseOsm:
    def test_basic_graph(self):
        g = parse_osm(simple_triangle())
        assert set(g.nodes) == {1, 2, 3}
        assert set(g.ways) == {10}
        # two segments, both directions
        assert len(g.adjacency[1]) == 1
        assert len(g.adjacency[2]) == 2
        assert g.warnings == []

    def test_way_without_highway_tag_excluded(self):
        doc = osm_xml(
            [(1, 0.0, 0.0), (2, 0.001, 0.0)],
            [(10, [1, 2], {"waterway": "river"})],
        )
        g = parse_osm(doc)
        assert g.ways == {} and g.nodes == {}

    def test_dangling_ref_drops_way_with_warning(self):
        doc = osm_xml(
            [(1, 0.0, 0.0), (2, 0.001, 0.0)],
            [
                (10, [1, 2, 99], {"highway": "residential"}),
                (11, [1, 2], {"highway": "primary"}),
            ],
        )
        g = parse_osm(doc)
        assert set(g.ways) == {11}
        assert len(g.warnings) == 1
        assert "99" in g.warnings[0]

    def test_malformed_xml_raises_with_line(self):
        with pytest.raises(MalformedDocument) as err:
            parse_osm(b"<osm>\n<node id=oops/>\n</osm>")
        assert err.value.line == 2

    def test_consecutive_duplicate_refs_collapsed(self):
        doc = osm_xml(
            [(1, 0.0, 0.0), (2, 0.001, 0.0)],
            [(10, [1, 1, 2, 2], {"highway": "residential"})],
        )
        g = parse_osm(doc)
        assert g.ways[10].node_refs == [1, 2]

    def test_oneway_adjacency_is_directed(self):
        g = parse_osm(chain_xml(n=3, oneway=True))
        assert [n for n, _, _ in g.adjacency[1]] == [2]
        assert g.adjacency[3] == []

    def test_reverse_oneway_flips_refs(self):
        doc = osm_xml(
            [(1, 0.0, 0.0), (2, 0.001, 0.0)],
            [(10, [1, 2], {"highway": "residential", "oneway": "-1"})],
        )
        g = parse_osm(doc)
        assert g.ways[10].node_refs == [2, 1]
        assert g.ways[10].oneway is True

    def test_deterministic_parse(self):
        doc = random_osm(random.Random(5), n_ways=10)
        g1, g2 = parse_osm(doc), parse_osm(doc)
        assert list(g1.nodes.items()) == list(g2.nodes.items())
        assert list(g1.ways.items()) == list(g2.ways.items())
        assert g1.adjacency == g2.adjacency
        assert g1.warnings == g2.warnings

    def test_adjacency_lengths_sum_to_polyline_length(self):
        g = parse_osm(random_osm(random.Random(9), n_ways=8))
        for way in g.ways.values():
            polyline = 0.0
            for a, b in zip(way.node_refs, way.node_refs[1:]):
                na, nb = g.nodes[a], g.nodes[b]
                polyline += haversine_m(na.lat, na.lon, nb.lat, nb.lon)
            edges = 0.0
            for a, b in zip(way.node_refs, way.node_refs[1:]):
                edges += next(
                    length for nbr, wid, length in g.adjacency[a]
                    if nbr == b and wid == way.osm_id
                )
            assert edges == pytest.approx(polyline, rel=1e-6)


class TestLoadIntoStore:
    def test_counts_and_relations(self):
        g = parse_osm(simple_triangle())
        store = LdmStore()
        assert load_into_store(g, store) == (3, 1)
        elements = store.elements()
        assert len(elements) == 4
        assert all(e.layer is LdmLayer.L1_Static for e in elements)
        assert all(e.kind is ElementKind.Context for e in elements)
        assert store.stats().relation_count == 3

    def test_reload_is_idempotent(self):
        g = parse_osm(simple_triangle())
        store = LdmStore()
        load_into_store(g, store)
        before = (store.elements(), store.relations())
        assert load_into_store(g, store) == (3, 1)
        assert (store.elements(), store.relations()) == before

    def test_empty_graph(self):
        from ldm.roadnet import RoadGraph

        assert load_into_store(RoadGraph(), LdmStore()) == (0, 0)


class TestNextNodes:
    def test_chain_forward(self):
        g = parse_osm(chain_xml(n=5))
        # chain runs west->east; heading 90 means east
        assert next_nodes(g, 1, 90.0, 3) == [2, 3, 4]

    def test_k_exceeds_reachable(self):
        g = parse_osm(chain_xml(n=3))
        assert next_nodes(g, 1, 90.0, 10) == [2, 3]

    def test_isolated_node(self):
        doc = osm_xml(
            [(1, 0.0, 0.0), (2, 0.001, 0.0), (7, 0.5, 0.5)],
            [(10, [1, 2], {"highway": "residential"}), (11, [7, 1], {"highway": "path"})],
        )
        g = parse_osm(doc)
        # node 3 of a oneway that ends there has no outgoing edges
        g2 = parse_osm(chain_xml(n=3, oneway=True))
        assert next_nodes(g2, 3, 90.0, 2) == []
        assert next_nodes(g, 7, 0.0, 1) == [1]

    def test_heading_picks_the_seed_direction(self):
        g = parse_osm(chain_xml(n=5))
        # From the middle, heading west walks the chain backwards.
        assert next_nodes(g, 3, 270.0, 2) == [2, 1]
        assert next_nodes(g, 3, 90.0, 2) == [4, 5]

    def test_unknown_node(self):
        g = parse_osm(chain_xml(n=3))
        with pytest.raises(UnknownNode):
            next_nodes(g, 99, 0.0, 1)

    def test_matches_oracle_on_random_graphs(self):
        rng = random.Random(31)
        for trial in range(10):
            g = parse_osm(random_osm(rng, n_ways=12))
            node_ids = list(g.nodes)
            for _ in range(20):
                start = rng.choice(node_ids)
                heading = rng.uniform(0, 360)
                k = rng.randint(1, 8)
                assert next_nodes(g, start, heading, k) == oracles.walk_next_nodes(g, start, heading, k)


class TestMapMatch:
    def test_point_beside_only_way(self):
        g = parse_osm(chain_xml(n=3, spacing_m=100.0))
        lat, lon = offset_point(150.0, 5.0)  # 5 m north of mid-segment
        m = map_match(g, lat, lon)
        assert m is not None
        assert m.way_id == 1
        assert m.segment_index == 1
        assert m.distance_m == pytest.approx(5.0, abs=0.01)
        oracle = oracles.match_point(g, lat, lon)
        assert (m.way_id, m.segment_index, m.distance_m) == oracle

    def test_far_point_unmatched(self):
        g = parse_osm(chain_xml(n=3))
        lat, lon = offset_point(0.0, 500.0)
        assert map_match(g, lat, lon) is None

    def test_equidistant_tie_breaks_to_lower_way_id(self):
        lat_n, lon_a = offset_point(-50.0, 20.0)
        _, lon_b = offset_point(50.0, 20.0)
        lat_s, _ = offset_point(-50.0, -20.0)
        doc = osm_xml(
            [
                (1, lat_s, lon_a), (2, lat_s, lon_b),
                (3, lat_n, lon_a), (4, lat_n, lon_b),
            ],
            [
                (7, [3, 4], {"highway": "residential"}),
                (3, [1, 2], {"highway": "residential"}),
            ],
        )
        g = parse_osm(doc)
        m = map_match(g, BASE_LAT, BASE_LON)
        assert m.way_id == 3

    def test_matches_exhaustive_oracle_on_random_graphs(self):
        rng = random.Random(77)
        for trial in range(8):
            g = parse_osm(random_osm(rng, n_ways=15))
            for _ in range(40):
                lat, lon = offset_point(rng.uniform(-4500, 4500), rng.uniform(-4500, 4500))
                got = map_match(g, lat, lon)
                expected = oracles.match_point(g, lat, lon)
                if expected is None:
                    assert got is None
                else:
                    assert (got.way_id, got.segment_index, got.distance_m) == expected
