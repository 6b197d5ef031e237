"""Procedural world: sampling, closed-form semantics, rasterizer, dataset IO."""

import numpy as np
import pytest

from actionvid.graph import ActionEdge, ActionGraph, ObjectNode
from actionvid.world import (ACTIONS, BACKGROUND, ContradictionError,
                             DatasetError, Episode, WorldObject,
                             build_vocabulary, execute_semantics,
                             export_dataset, import_dataset, objects_from_graph,
                             rasterize, render_episode, sample_episode,
                             sample_huddle_scene, sample_swap_scene,
                             sample_timing_pair)

VOCAB = build_vocabulary()


def world_graph(objs, edges, length=16):
    nodes = tuple(ObjectNode(id=i, category=VOCAB.category_index(o.category_name),
                             attributes={"shape": o.shape, "color": o.color,
                                         "size": o.size})
                  for i, o in enumerate(objs))
    return ActionGraph(vocabulary=VOCAB, objects=nodes, edges=tuple(edges),
                       length=length)


def edge(action, subject, obj, t_s, t_e, **attrs):
    return ActionEdge(subject=subject, action=ACTIONS.index(action), object=obj,
                      t_start=t_s, t_end=t_e,
                      attrs={k: float(v) for k, v in attrs.items()})


class TestSampling:
    def test_same_seed_bit_identical(self):
        a = sample_episode(0)
        b = sample_episode(0)
        assert a.graph == b.graph
        assert np.array_equal(a.layouts, b.layouts)
        assert np.array_equal(a.frames, b.frames)

    def test_zero_actions_gives_static_scene(self):
        ep = sample_episode(3, n_objects=3, n_actions=0)
        assert len(ep.graph.edges) == 0
        for t in range(1, ep.length):
            assert np.array_equal(ep.layouts[t], ep.layouts[0])

    def test_requested_action_count(self):
        ep = sample_episode(5, n_objects=4, n_actions=3)
        assert len(ep.graph.edges) == 3

    def test_parameter_ranges_enforced(self):
        with pytest.raises(ValueError):
            sample_episode(0, n_objects=1)
        with pytest.raises(ValueError):
            sample_episode(0, n_actions=9)

    @pytest.mark.parametrize("seed", range(0, 100))
    def test_boxes_stay_inside_unit_square(self, seed):
        # destination sampling must keep every box inside [0, 1] at all frames
        ep = sample_episode(seed)
        x, y, w, h = (ep.layouts[..., k] for k in range(4))
        assert np.all(w > 0) and np.all(h > 0)
        assert np.all(x - w / 2 >= -1e-9) and np.all(x + w / 2 <= 1 + 1e-9)
        assert np.all(y - h / 2 >= -1e-9) and np.all(y + h / 2 <= 1 + 1e-9)
        assert np.all(np.minimum(w, h) * 64 >= 2.0)  # >= 2 pixels at 64x64

    def test_ground_truth_consistency(self):
        # re-running the semantics on (graph, first layout) reproduces
        # the stored trajectory exactly
        for seed in range(20):
            ep = sample_episode(seed)
            again = execute_semantics(ep.graph, ep.layouts[0])
            assert np.array_equal(again, ep.layouts)

    def test_frames_match_rerender(self):
        ep = sample_episode(11)
        again = render_episode(ep.graph, ep.layouts, resolution=64)
        assert np.array_equal(again, ep.frames)

    def test_no_overlapping_contains_in_training_corpora(self):
        for seed in range(60):
            ep = sample_episode(seed)
            wins = [(e.t_start, e.t_end) for e in ep.graph.edges
                    if ep.graph.action_name(e) == "contain"]
            for i, (s1, e1) in enumerate(wins):
                for s2, e2 in wins[i + 1:]:
                    assert e1 <= s2 or e2 <= s1


class TestSemantics:
    def setup_method(self):
        self.objs = [WorldObject("cone", "red", "large", 0),
                     WorldObject("square", "blue", "small", 1),
                     WorldObject("circle", "green", "medium", 2)]
        self.boxes0 = np.array([[0.3, 0.5, 0.24, 0.24],
                                [0.7, 0.3, 0.10, 0.10],
                                [0.7, 0.7, 0.16, 0.16]])

    def test_slide_linear_interpolation(self):
        g = world_graph(self.objs[:2], [edge("slide", 0, 0, 0, 8, dx=0.2, dy=-0.1)])
        layouts = execute_semantics(g, self.boxes0[:2])
        # r = 0.5 at t = 4: center (0.3, 0.5) + 0.5 * (0.2, -0.1)
        assert layouts[4, 0, 0] == pytest.approx(0.4)
        assert layouts[4, 0, 1] == pytest.approx(0.45)
        assert layouts[8, 0, 0] == pytest.approx(0.5)
        assert np.array_equal(layouts[:, 0, 2:], np.tile([0.24, 0.24], (16, 1)))

    def test_rotate_keeps_layout_static(self):
        g = world_graph(self.objs[:2], [edge("rotate", 1, 1, 0, 16)])
        layouts = execute_semantics(g, self.boxes0[:2])
        static = execute_semantics(world_graph(self.objs[:2], []), self.boxes0[:2])
        assert np.array_equal(layouts, static)

    def test_pick_place_phases(self):
        g = world_graph(self.objs[:2], [edge("pick_place", 1, 1, 0, 8, dx=0.1, dy=0.2)])
        layouts = execute_semantics(g, self.boxes0[:2])
        # r=0.25 at t=2: fully lifted, not yet moved
        assert layouts[2, 1, 2] == pytest.approx(0.12)
        assert layouts[2, 1, 0] == pytest.approx(0.7)
        # r=0.5 at t=4: midway through the move, still lifted
        assert layouts[4, 1, 0] == pytest.approx(0.75)
        assert layouts[4, 1, 2] == pytest.approx(0.12)
        # r=1 at t=8: landed at destination, original size
        assert layouts[8, 1, 0] == pytest.approx(0.8)
        assert layouts[8, 1, 2] == pytest.approx(0.10)

    def test_contain_translates_cone_onto_target(self):
        g = world_graph(self.objs, [edge("contain", 0, 1, 2, 10)])
        layouts = execute_semantics(g, self.boxes0)
        assert np.allclose(layouts[10, 0, :2], [0.7, 0.3])
        # contained object center snaps to (stays under) the cone
        for t in range(10, 16):
            assert np.allclose(layouts[t, 1, :2], layouts[t, 0, :2])

    def test_contained_object_inherits_cone_motion(self):
        g = world_graph(self.objs, [edge("contain", 0, 1, 2, 8),
                                    edge("slide", 0, 0, 10, 14, dx=-0.2, dy=0.1)])
        layouts = execute_semantics(g, self.boxes0)
        for t in range(10, 16):
            assert np.allclose(layouts[t, 1, :2], layouts[t, 0, :2])
        assert np.allclose(layouts[14, 0, :2], [0.5, 0.4])
        # extents of the contained object never change
        assert np.array_equal(layouts[:, 1, 2:], np.tile([0.10, 0.10], (16, 1)))

    def test_swap_composite_exchanges_centers(self):
        objs = [WorldObject("square", "red", "medium", 0),
                WorldObject("circle", "blue", "medium", 1)]
        boxes0 = np.array([[0.2, 0.5, 0.16, 0.16], [0.8, 0.5, 0.16, 0.16]])
        g = world_graph(objs, [edge("pick_place", 0, 0, 2, 10, dx=0.6, dy=0.0),
                               edge("slide", 1, 1, 2, 10, dx=-0.6, dy=0.0)])
        layouts = execute_semantics(g, boxes0)
        assert np.allclose(layouts[15, 0, :2], [0.8, 0.5])
        assert np.allclose(layouts[15, 1, :2], [0.2, 0.5])

    def test_back_to_back_windows_chain(self):
        g = world_graph(self.objs[:2], [edge("slide", 1, 1, 0, 5, dx=0.1, dy=0.0),
                                        edge("slide", 1, 1, 5, 10, dx=0.0, dy=0.2)])
        layouts = execute_semantics(g, self.boxes0[:2])
        assert np.allclose(layouts[10, 1, :2], [0.8, 0.5])

    def test_overlapping_motion_rejected(self):
        g = world_graph(self.objs[:2], [edge("slide", 1, 1, 0, 8, dx=0.1, dy=0.0),
                                        edge("slide", 1, 1, 4, 12, dx=-0.1, dy=0.0)])
        with pytest.raises(ContradictionError, match="overlapping"):
            execute_semantics(g, self.boxes0[:2])

    def test_rotate_plus_slide_overlap_rejected(self):
        g = world_graph(self.objs[:2], [edge("rotate", 1, 1, 0, 8),
                                        edge("slide", 1, 1, 4, 12, dx=0.1, dy=0.0)])
        with pytest.raises(ContradictionError):
            execute_semantics(g, self.boxes0[:2])

    def test_non_cone_contain_subject_rejected(self):
        g = world_graph(self.objs, [edge("contain", 1, 2, 2, 10)])
        with pytest.raises(ContradictionError, match="cone"):
            execute_semantics(g, self.boxes0)

    def test_contained_target_moving_later_rejected(self):
        g = world_graph(self.objs, [edge("contain", 0, 1, 2, 8),
                                    edge("slide", 1, 1, 10, 14, dx=0.1, dy=0.0)])
        with pytest.raises(ContradictionError, match="moves after contain"):
            execute_semantics(g, self.boxes0)


class TestRasterize:
    def test_empty_layout_uniform_background(self):
        img = rasterize(np.zeros((0, 4)), [], resolution=64)
        assert np.array_equal(img, np.full((64, 64, 3), BACKGROUND, dtype=np.uint8))

    def test_centered_square_covers_exact_center_block(self):
        obj = WorldObject("square", "red", "medium", 0)
        img = rasterize(np.array([[0.5, 0.5, 0.5, 0.5]]), [obj], resolution=64)
        colored = np.all(img == obj.rgb, axis=-1)
        expected = np.zeros((64, 64), dtype=bool)
        expected[16:48, 16:48] = True
        assert np.array_equal(colored, expected)

    def test_contained_object_contributes_zero_pixels(self):
        objs = [WorldObject("cone", "red", "large", 0),
                WorldObject("square", "blue", "small", 1)]
        g = world_graph(objs, [edge("contain", 0, 1, 2, 8)])
        boxes0 = np.array([[0.3, 0.5, 0.24, 0.24], [0.7, 0.5, 0.10, 0.10]])
        layouts = execute_semantics(g, boxes0)
        frames = render_episode(g, layouts, resolution=64)
        blue = np.array(objs[1].rgb, dtype=np.uint8)
        for t in range(8, 16):
            assert not np.any(np.all(frames[t] == blue, axis=-1))
        # before containment the target is visible
        assert np.any(np.all(frames[0] == blue, axis=-1))

    def test_spoke_rendered_during_rotate(self):
        objs = [WorldObject("circle", "red", "large", 0),
                WorldObject("square", "blue", "small", 1)]
        g = world_graph(objs, [edge("rotate", 0, 0, 2, 10)])
        boxes0 = np.array([[0.5, 0.5, 0.24, 0.24], [0.15, 0.15, 0.10, 0.10]])
        layouts = execute_semantics(g, boxes0)
        frames = render_episode(g, layouts, resolution=64)
        inverse = np.array([255 - c for c in objs[0].rgb], dtype=np.uint8)
        assert np.any(np.all(frames[5] == inverse, axis=-1))
        # the spoke angle changes while the action runs
        assert not np.array_equal(frames[4], frames[6])


class TestDatasetIO:
    def test_round_trip_lossless(self, tmp_path):
        episodes = [sample_episode(s) for s in range(10)]
        export_dataset(episodes, tmp_path / "d", base_seed=0)
        loaded, meta = import_dataset(tmp_path / "d")
        assert meta["episodes"] == 10
        for a, b in zip(episodes, loaded):
            assert a.graph == b.graph
            assert np.array_equal(a.layouts, b.layouts)
            assert np.array_equal(a.frames, b.frames)
            assert a.seed == b.seed

    def test_missing_frame_file_names_episode(self, tmp_path):
        episodes = [sample_episode(s) for s in range(2)]
        export_dataset(episodes, tmp_path / "d", base_seed=0)
        (tmp_path / "d" / "ep00001" / "frames" / "005.ppm").unlink()
        with pytest.raises(DatasetError, match="episode 1.*005\\.ppm"):
            import_dataset(tmp_path / "d")

    def test_refuses_nonempty_dir_without_force(self, tmp_path):
        episodes = [sample_episode(0)]
        export_dataset(episodes, tmp_path / "d")
        with pytest.raises(FileExistsError):
            export_dataset(episodes, tmp_path / "d")
        export_dataset(episodes, tmp_path / "d", force=True)

    def test_objects_from_graph_reconstruct_world(self):
        ep = sample_episode(4)
        objs = objects_from_graph(ep.graph)
        assert len(objs) == ep.graph.n_objects
        for node, obj in zip(ep.graph.objects, objs):
            assert VOCAB.categories[node.category] == obj.category_name


class TestControlledScenes:
    def test_timing_pair_windows_differ_only_by_shift(self):
        early, late, boxes0, subject = sample_timing_pair(0)
        assert early.objects == late.objects
        e_edge, l_edge = early.edges[0], late.edges[0]
        assert e_edge.t_start < l_edge.t_start
        assert e_edge.t_end - e_edge.t_start == l_edge.t_end - l_edge.t_start
        assert e_edge.action == l_edge.action
        assert early.vocabulary.actions[e_edge.action] != "rotate"

    def test_swap_scene_is_composed_and_separated(self):
        g, boxes0, (i, j) = sample_swap_scene(0)
        assert len(g.edges) == 2
        names = sorted(g.action_name(e) for e in g.edges)
        assert names == ["pick_place", "slide"]
        assert np.linalg.norm(boxes0[i, :2] - boxes0[j, :2]) >= 0.2
        layouts = execute_semantics(g, boxes0)
        assert np.allclose(layouts[-1, i, :2], boxes0[j, :2], atol=1e-9)
        assert np.allclose(layouts[-1, j, :2], boxes0[i, :2], atol=1e-9)

    def test_huddle_scene_all_cones_land_on_targets(self):
        g, boxes0, pairs = sample_huddle_scene(0)
        assert len(g.edges) == len(pairs) >= 2
        layouts = execute_semantics(g, boxes0)
        for cone, target in pairs:
            assert np.allclose(layouts[-1, cone, :2], boxes0[target, :2], atol=1e-9)
