import numpy as np

from celltrack.evaluation import (
    MatchParams,
    evaluate_video,
    match_cells,
)
from celltrack.graph import TrackGraph
from celltrack.grid import region_properties
from celltrack.simulate import SimConfig, simulate


def build_graph(frames, edges):
    graph = TrackGraph()
    for f, labels in enumerate(frames):
        graph.add_frame(region_properties(labels, frame_index=f))
    for a, b in edges:
        graph.add_edge(a, b)
    return graph


def _frame(shape=(12, 20)):
    return np.zeros(shape, np.int32)


def _two_cell_frames(n_frames=2):
    frames = []
    for _ in range(n_frames):
        labels = _frame()
        labels[2:6, 2:8] = 1
        labels[7:11, 2:8] = 2
        frames.append(labels)
    return frames


# ----------------------------------------------------------------- matching


def test_match_identical_frames():
    frames = _two_cell_frames(1)
    relation = match_cells(frames[0], frames[0])
    assert relation == {(1, 1), (2, 2)}


def test_match_under_segmentation_many_to_one():
    ref = _two_cell_frames(1)[0]
    res = _frame()
    res[2:11, 2:8] = 1  # covers both reference cells
    relation = match_cells(ref, res)
    assert relation == {(1, 1), (2, 1)}


def test_match_boundary_is_strict():
    ref = _frame()
    ref[2:4, 2:4] = 1  # area 4
    res = _frame()
    res[3:5, 2:4] = 1  # overlap exactly 2 = 0.5 * min
    relation = match_cells(ref, res, MatchParams(absolute_overlap=10.0))
    assert relation == set()


# ------------------------------------------------------- golden scenarios


def test_golden_case_underseg_no_tracking_error():
    # two reference cells tracked into one under-segmented result object
    ref_frames = _two_cell_frames()
    ref_graph = build_graph(ref_frames, [((0, 1), (1, 1)), ((0, 2), (1, 2))])
    res_f1 = _frame()
    res_f1[2:11, 2:8] = 1
    res_frames = [ref_frames[0].copy(), res_f1]
    res_graph = build_graph(res_frames, [((0, 1), (1, 1)), ((0, 2), (1, 1))])
    report = evaluate_video(
        ref_frames, ref_graph, res_frames, res_graph, MatchParams(edge_exclusion=False)
    )
    assert report.under_segmentations == 1
    assert report.over_segmentations == 0
    assert report.false_positive_cells == report.false_negative_cells == 0
    assert report.tracking_errors == 0
    # the under-segmentation touches both lineages
    assert (report.complete_lineages, report.total_lineages) == (0, 2)


def test_golden_case_overseg_no_tracking_error():
    ref_frames = []
    for _ in range(2):
        labels = _frame()
        labels[2:10, 2:8] = 1
        ref_frames.append(labels)
    ref_graph = build_graph(ref_frames, [((0, 1), (1, 1))])
    res_f0 = _frame()
    res_f0[2:6, 2:8] = 1
    res_f0[6:10, 2:8] = 2
    res_frames = [res_f0, ref_frames[1].copy()]
    res_graph = build_graph(res_frames, [((0, 1), (1, 1)), ((0, 2), (1, 1))])
    report = evaluate_video(
        ref_frames, ref_graph, res_frames, res_graph, MatchParams(edge_exclusion=False)
    )
    assert report.over_segmentations == 1
    assert report.under_segmentations == 0
    assert report.tracking_errors == 0


def test_golden_case_compound_under_and_over():
    # one object covers cell A and most of cell B; a second object covers the
    # rest of B: one under- plus one over-segmentation, no tracking error
    ref_frames = _two_cell_frames()
    ref_graph = build_graph(ref_frames, [((0, 1), (1, 1)), ((0, 2), (1, 2))])
    res_f0 = _frame()
    res_f0[2:6, 2:8] = 1  # all of A
    res_f0[7:11, 2:6] = 1  # ~66% of B
    res_f0[7:11, 6:8] = 2  # rest of B
    res_frames = [res_f0, ref_frames[1].copy()]
    res_graph = build_graph(res_frames, [((0, 1), (1, 1)), ((0, 2), (1, 2))])
    report = evaluate_video(
        ref_frames, ref_graph, res_frames, res_graph, MatchParams(edge_exclusion=False)
    )
    assert report.under_segmentations == 1
    assert report.over_segmentations == 1
    assert report.false_positive_cells == report.false_negative_cells == 0
    assert report.tracking_errors == 0


def test_crossing_swap_counts_two_fp_two_fn():
    ref_frames = _two_cell_frames()
    ref_graph = build_graph(ref_frames, [((0, 1), (1, 1)), ((0, 2), (1, 2))])
    res_graph = build_graph(ref_frames, [((0, 1), (1, 2)), ((0, 2), (1, 1))])
    report = evaluate_video(
        ref_frames, ref_graph, ref_frames, res_graph, MatchParams(edge_exclusion=False)
    )
    assert report.segmentation_errors == 0
    assert report.false_positive_links == 2
    assert report.false_negative_links == 2


def test_missed_division_is_one_fn_link():
    f0 = _frame()
    f0[4:8, 4:10] = 1
    f1 = _frame()
    f1[2:5, 4:10] = 1
    f1[7:10, 4:10] = 2
    ref_graph = build_graph([f0, f1], [((0, 1), (1, 1)), ((0, 1), (1, 2))])
    res_graph = build_graph([f0, f1], [((0, 1), (1, 1))])
    report = evaluate_video(
        [f0, f1], ref_graph, [f0, f1], res_graph, MatchParams(edge_exclusion=False)
    )
    assert report.false_negative_links == 1
    assert report.false_positive_links == 0


def test_empty_result_frame_counts_fn_cells():
    ref_frames = _two_cell_frames(1)
    ref_frames[0][2:6, 12:18] = 3
    ref_graph = build_graph(ref_frames, [])
    res_frames = [_frame()]
    res_graph = build_graph(res_frames, [])
    report = evaluate_video(
        ref_frames, ref_graph, res_frames, res_graph, MatchParams(edge_exclusion=False)
    )
    assert report.false_negative_cells == 3


# ----------------------------------------------------------------- lineages


def test_division_tolerance_keeps_lineage_complete():
    # reference divides at frame 1; result keeps one object at frame 1 and
    # divides at frame 2 (one frame late)
    ref = [_frame() for _ in range(3)]
    ref[0][4:8, 4:10] = 1
    for f in (1, 2):
        ref[f][2:5, 4:10] = 1
        ref[f][7:10, 4:10] = 2
    ref_graph = build_graph(
        ref,
        [((0, 1), (1, 1)), ((0, 1), (1, 2)), ((1, 1), (2, 1)), ((1, 2), (2, 2))],
    )
    res = [ref[0].copy(), _frame(), ref[2].copy()]
    res[1][2:10, 4:10] = 1
    res_graph = build_graph(
        res, [((0, 1), (1, 1)), ((1, 1), (2, 1)), ((1, 1), (2, 2))]
    )
    tolerant = evaluate_video(
        ref, ref_graph, res, res_graph, MatchParams(edge_exclusion=False)
    )
    assert tolerant.under_segmentations == 1  # still a segmentation error
    assert tolerant.tracking_errors == 0
    assert (tolerant.complete_lineages, tolerant.total_lineages) == (1, 1)
    strict = evaluate_video(
        ref,
        ref_graph,
        res,
        res_graph,
        MatchParams(edge_exclusion=False, mitosis_frame_tolerance=0),
    )
    assert (strict.complete_lineages, strict.total_lineages) == (0, 1)


def test_edge_exclusion_drops_errors_and_denominators():
    ref = [_frame() for _ in range(2)]
    for f in range(2):
        ref[f][0:3, 4:9] = 1  # touches the top edge
        ref[f][6:10, 4:9] = 2  # interior
    ref_graph = build_graph(ref, [((0, 1), (1, 1)), ((0, 2), (1, 2))])
    res = [_frame() for _ in range(2)]
    for f in range(2):
        res[f][6:10, 4:9] = 1  # edge cell missed entirely
    res_graph = build_graph(res, [((0, 1), (1, 1))])
    excl = evaluate_video(ref, ref_graph, res, res_graph, MatchParams(edge_exclusion=True))
    assert excl.segmentation_errors == 0
    assert excl.tracking_errors == 0
    assert excl.total_ref_cells == 2
    assert excl.total_ref_links == 1
    assert (excl.complete_lineages, excl.total_lineages) == (1, 1)
    incl = evaluate_video(ref, ref_graph, res, res_graph, MatchParams(edge_exclusion=False))
    assert incl.false_negative_cells == 2
    assert incl.total_ref_cells == 4


# ----------------------------------------------------------------- sanity


def test_self_evaluation_is_perfect():
    result = simulate(SimConfig(width=128, height=128, cell_count=8, frame_count=5, seed=6))
    report = evaluate_video(
        result.frames, result.graph, result.frames, result.graph, MatchParams()
    )
    assert report.segmentation_errors == 0
    assert report.tracking_errors == 0
    assert report.complete_lineages == report.total_lineages > 0


def test_label_permutation_invariance():
    result = simulate(SimConfig(width=96, height=96, cell_count=5, frame_count=4, seed=10))
    # permute result labels consistently (reverse order per frame)
    permuted = []
    perm_graph = TrackGraph()
    mapping = {}
    for f, labels in enumerate(result.frames):
        k = int(labels.max())
        lut = np.zeros(k + 1, np.int32)
        lut[1:] = np.arange(k, 0, -1)
        permuted.append(lut[labels])
        for lab in range(1, k + 1):
            mapping[(f, lab)] = (f, int(lut[lab]))
        perm_graph.add_frame(region_properties(permuted[-1], frame_index=f))
    for a, b in result.graph.edges():
        perm_graph.add_edge(mapping[a], mapping[b])
    base = evaluate_video(result.frames, result.graph, result.frames, result.graph)
    perm = evaluate_video(result.frames, result.graph, permuted, perm_graph)
    assert base.segmentation_errors == perm.segmentation_errors == 0
    assert base.tracking_errors == perm.tracking_errors == 0
    assert (base.complete_lineages, base.total_lineages) == (
        perm.complete_lineages,
        perm.total_lineages,
    )


def test_report_text_and_csv_shapes():
    result = simulate(SimConfig(width=96, height=96, cell_count=4, frame_count=3, seed=2))
    report = evaluate_video(result.frames, result.graph, result.frames, result.graph)
    text = report.to_text()
    assert "segmentation errors" in text
    csv = report.to_csv()
    assert csv.startswith("section,frame")
    assert len(csv.strip().splitlines()) == 1 + 3 + 2 + 2
