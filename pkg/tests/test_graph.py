"""Action graph model, clocked scheduling, file format, composition."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actionvid.graph import (ActionEdge, ActionGraph, GraphFormatError,
                             GraphValidationError, ObjectNode, Vocabulary,
                             clocked_at, compose, parse_graph, progress,
                             serialize_graph, unroll)
from actionvid.world import build_vocabulary

VOCAB = build_vocabulary()


def make_graph(edges, n_objects=2, length=16):
    shapes = ["cone", "square", "circle", "triangle", "circle", "square"]
    objects = tuple(
        ObjectNode(id=i,
                   category=VOCAB.category_index(f"red_medium_{shapes[i]}"),
                   attributes={"shape": shapes[i], "color": "red", "size": "medium"})
        for i in range(n_objects))
    return ActionGraph(vocabulary=VOCAB, objects=objects, edges=tuple(edges),
                       length=length)


def slide(subject, t_s, t_e, dx=0.2, dy=-0.1):
    return ActionEdge(subject=subject, action=VOCAB.action_index("slide"),
                      object=subject, t_start=t_s, t_end=t_e,
                      attrs={"dx": dx, "dy": dy})


def rotate(subject, t_s, t_e):
    return ActionEdge(subject=subject, action=VOCAB.action_index("rotate"),
                      object=subject, t_start=t_s, t_end=t_e)


def contain(subject, target, t_s, t_e):
    return ActionEdge(subject=subject, action=VOCAB.action_index("contain"),
                      object=target, t_start=t_s, t_end=t_e)


class TestProgress:
    def test_at_start(self):
        assert progress(slide(0, 4, 12), 4) == 0.0

    def test_midpoint(self):
        assert progress(slide(0, 4, 12), 8) == 0.5

    def test_clipped_after_end(self):
        assert progress(slide(0, 4, 12), 20) == 1.0

    def test_clipped_before_start(self):
        assert progress(slide(0, 4, 12), 2) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 50), st.integers(1, 50), st.integers(0, 100))
    def test_monotone_and_piecewise_linear(self, t_s, dur, t):
        edge = slide(0, t_s, t_s + dur)
        r_now = progress(edge, t)
        r_next = progress(edge, t + 1)
        assert 0.0 <= r_now <= 1.0
        assert r_next >= r_now
        if t_s <= t and t + 1 <= t_s + dur:
            # inside the window the slope is exactly 1/(t_e - t_s)
            assert r_next - r_now == pytest.approx(1.0 / dur)


class TestValidation:
    def test_minimal_graph_one_rotate_self_edge(self):
        g = make_graph([rotate(0, 0, 16)], n_objects=1)
        assert g.n_objects == 1
        assert g.edges[0].subject == g.edges[0].object

    def test_degenerate_window_rejected(self):
        with pytest.raises(GraphValidationError, match="time window"):
            make_graph([ActionEdge(subject=0, action=VOCAB.action_index("rotate"),
                                   object=0, t_start=5, t_end=5)])

    def test_missing_destination_attr_rejected(self):
        with pytest.raises(GraphValidationError, match="destination"):
            make_graph([ActionEdge(subject=0, action=VOCAB.action_index("slide"),
                                   object=0, t_start=0, t_end=8)])

    def test_out_of_range_object_rejected(self):
        with pytest.raises(GraphValidationError, match="out of range"):
            make_graph([slide(5, 0, 8)], n_objects=2)

    def test_noncontiguous_ids_rejected(self):
        with pytest.raises(GraphValidationError, match="contiguous"):
            ActionGraph(vocabulary=VOCAB,
                        objects=(ObjectNode(id=1, category=0),),
                        edges=(), length=4)


class TestClockedSchedule:
    def test_unroll_emits_t_graphs(self):
        g = make_graph([], n_objects=2, length=16)
        seq = unroll(g)
        assert len(seq) == 16
        assert all(len(c.edges) == 0 for c in seq)
        assert [c.t for c in seq] == list(range(1, 17))

    def test_full_span_edges_complete_at_t_equals_length(self):
        g = make_graph([slide(0, 0, 16), rotate(1, 0, 16)], length=16)
        last = unroll(g)[-1]
        assert last.t == 16
        assert all(ce.progress == 1.0 for ce in last.edges)

    def test_staggered_edges_first_running_second_untouched(self):
        # second action starts later: before its start its clock is 0
        # while the first is mid-flight
        g = make_graph([slide(0, 0, 8), slide(1, 10, 15)], length=16)
        at5 = clocked_at(g, 5)
        assert 0.0 < at5.edges[0].progress < 1.0
        assert at5.edges[1].progress == 0.0

    def test_topology_constant_across_time(self):
        g = make_graph([slide(0, 0, 8), rotate(1, 2, 9)], length=16)
        for clocked in unroll(g):
            assert len(clocked.edges) == len(g.edges)
            assert [ce.edge for ce in clocked.edges] == list(g.edges)


class TestCompose:
    def test_identity_on_single_graph(self):
        g = make_graph([slide(0, 0, 8)])
        assert compose(g) == g

    def test_swap_is_two_simultaneous_edges(self):
        pp = ActionEdge(subject=0, action=VOCAB.action_index("pick_place"),
                        object=0, t_start=2, t_end=10,
                        attrs={"dx": 0.3, "dy": 0.0})
        sl = ActionEdge(subject=1, action=VOCAB.action_index("slide"),
                        object=1, t_start=2, t_end=10,
                        attrs={"dx": -0.3, "dy": 0.0})
        combined = compose(make_graph([pp]), make_graph([sl]))
        assert len(combined.edges) == 2
        assert {e.t_start for e in combined.edges} == {2}

    def test_huddle_is_one_contain_per_container(self):
        graphs = [make_graph([contain(0, k, 2, 10)], n_objects=4)
                  for k in (1, 2, 3)]
        combined = compose(*graphs)
        assert len(combined.edges) == 3
        assert {e.object for e in combined.edges} == {1, 2, 3}

    def test_duplicate_edges_collapse(self):
        g = make_graph([slide(0, 0, 8)])
        assert len(compose(g, g).edges) == 1

    def test_conflicting_objects_rejected(self):
        a = make_graph([], n_objects=2)
        b = ActionGraph(
            vocabulary=VOCAB,
            objects=(a.objects[0],
                     ObjectNode(id=1, category=VOCAB.category_index("blue_small_circle"),
                                attributes={"shape": "circle", "color": "blue",
                                            "size": "small"})),
            edges=(), length=16)
        with pytest.raises(GraphValidationError, match="redefined"):
            compose(a, b)


class TestFileFormat:
    def test_minimal_file_round_trip(self):
        g = make_graph([rotate(0, 0, 16)], n_objects=1)
        assert parse_graph(serialize_graph(g)) == g

    def test_teaser_style_graph_round_trips(self):
        # slide over frames 0..9 with a destination offset, then a
        # contain over frames 9..15, in a 16-frame program
        g = make_graph([slide(1, 0, 9, dx=0.25, dy=0.1), contain(0, 1, 9, 15)],
                       n_objects=2, length=16)
        text = serialize_graph(g)
        again = parse_graph(text)
        assert again == g
        assert serialize_graph(again) == text

    def test_syntax_error_reports_line(self):
        with pytest.raises(GraphFormatError, match=r"line \d+"):
            parse_graph('{"vocab": [,]}')

    def test_unknown_top_level_field_rejected(self):
        doc = json.loads(serialize_graph(make_graph([]))); doc["extra"] = 1
        with pytest.raises(GraphFormatError, match="unknown field"):
            parse_graph(json.dumps(doc))

    def test_unknown_action_rejected(self):
        doc = json.loads(serialize_graph(make_graph([rotate(0, 0, 8)])))
        doc["edges"][0]["action"] = "teleport"
        with pytest.raises(GraphFormatError, match="teleport"):
            parse_graph(json.dumps(doc))

    def test_unknown_category_rejected(self):
        doc = json.loads(serialize_graph(make_graph([])))
        doc["objects"][0]["category"] = "beige_giant_torus"
        with pytest.raises(GraphFormatError, match="beige_giant_torus"):
            parse_graph(json.dumps(doc))

    def test_missing_destination_attr_names_it(self):
        doc = json.loads(serialize_graph(make_graph([slide(0, 0, 8)])))
        del doc["edges"][0]["attrs"]["dx"]
        with pytest.raises(GraphFormatError, match="destination attribute 'dx'"):
            parse_graph(json.dumps(doc))

    def test_time_bounds_enforced(self):
        doc = json.loads(serialize_graph(make_graph([slide(0, 0, 8)])))
        doc["edges"][0]["end"] = 99
        with pytest.raises(GraphFormatError, match="time window"):
            parse_graph(json.dumps(doc))

    def test_offset_range_enforced(self):
        doc = json.loads(serialize_graph(make_graph([slide(0, 0, 8)])))
        doc["edges"][0]["attrs"]["dx"] = 1.5
        with pytest.raises(GraphFormatError, match=r"outside \[-1, 1\]"):
            parse_graph(json.dumps(doc))

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_round_trip_on_random_graphs(self, data):
        n = data.draw(st.integers(1, 4))
        n_edges = data.draw(st.integers(0, 3))
        edges = []
        windows = {}
        for _ in range(n_edges):
            subj = data.draw(st.integers(0, n - 1))
            t_s = data.draw(st.integers(0, 10))
            dur = data.draw(st.integers(1, 5))
            if any(t_s < e and s < t_s + dur for s, e in windows.get(subj, [])):
                continue
            windows.setdefault(subj, []).append((t_s, t_s + dur))
            dx = data.draw(st.floats(-1, 1, allow_nan=False))
            edges.append(slide(subj, t_s, t_s + dur, dx=dx, dy=0.0))
        g = make_graph(edges, n_objects=n)
        assert parse_graph(serialize_graph(g)) == g

    def test_schedule_completeness_property(self):
        g = make_graph([slide(0, 0, 8), rotate(1, 3, 12)], length=16)
        for clocked in unroll(g):
            assert len(clocked.edges) == len(g.edges)
