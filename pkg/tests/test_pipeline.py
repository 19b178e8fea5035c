from dataclasses import replace

import numpy as np
import pytest

from stereopipe import costpost, sgm
from stereopipe.census import census_transform
from stereopipe.imagecore import INVALID, DisparityMap, GrayImage
from stereopipe.pipeline import (
    POST_STAGES,
    BenchReport,
    PipelineConfig,
    StageError,
    Stages,
    benchmark,
    build_config,
    evaluate,
    for_range,
    load_config,
    parse_config,
    run_pipeline,
)
from stereopipe.rectify import RectificationMap
from stereopipe.scenes import gen_test_scene, parse_kind, shift_scene, two_plane_scene


@pytest.fixture(scope="module")
def shift6():
    return shift_scene(6, 96, 64, seed=3)


def test_shift_scene_recovers_disparity(shift6):
    disp = run_pipeline(shift6.left, shift6.right, for_range(32))
    inner = disp.data[8:-8, 14:-8].astype(np.int64)
    assert (np.abs(inner - 6 * 16) <= 1).mean() > 0.99


def test_post_processing_disabled_is_raw_extraction(shift6):
    cfg = for_range(32, stages=Stages().without_post())
    disp = run_pipeline(shift6.left, shift6.right, cfg)
    cl, cr = census_transform(shift6.left), census_transform(shift6.right)
    vol = sgm.aggregate(sgm.matching_cost(cl, cr, cfg.match), cfg.match)
    assert disp == costpost.extract_disparity(vol, cfg.match)


def test_identity_rectification_changes_nothing(shift6):
    base = for_range(32)
    rect = replace(base, rectification_map=RectificationMap.identity(96, 64),
                   stages=replace(base.stages, rectify=True))
    assert run_pipeline(shift6.left, shift6.right, rect) == run_pipeline(
        shift6.left, shift6.right, base)


def test_two_plane_shadow_invalidated():
    scene = two_plane_scene(4, 20, 160, 96, seed=1)
    disp = run_pipeline(scene.left, scene.right, for_range(32))
    assert scene.occluded.sum() == 48 * 16
    assert (~disp.valid[scene.occluded]).mean() >= 0.9


def test_noise_scene_truth_is_empty():
    scene = gen_test_scene("noise", 40, 30, seed=2)
    assert not scene.truth.valid.any()


def test_density_monotone_in_stages(shift6):
    scene = two_plane_scene(4, 20, 128, 64, seed=4)
    full = for_range(32)
    base_density = run_pipeline(scene.left, scene.right, full).valid.mean()
    for name in POST_STAGES:
        cfg = replace(full, stages=replace(full.stages, **{name: False}))
        density = run_pipeline(scene.left, scene.right, cfg).valid.mean()
        if name == "gap":
            assert density <= base_density
        else:
            assert density >= base_density


def test_threads_do_not_change_output():
    scene = two_plane_scene(4, 20, 128, 64, seed=5)
    one = run_pipeline(scene.left, scene.right, for_range(32))
    many = run_pipeline(scene.left, scene.right, for_range(32, threads=4))
    assert one == many


def test_size_mismatch_is_stage_error():
    a = GrayImage(np.zeros((10, 10), np.uint8))
    b = GrayImage(np.zeros((10, 12), np.uint8))
    with pytest.raises(StageError) as info:
        run_pipeline(a, b, PipelineConfig())
    assert info.value.stage == "input"


def test_tiny_image_fails_in_census_stage():
    a = GrayImage(np.zeros((3, 3), np.uint8))
    with pytest.raises(StageError) as info:
        run_pipeline(a, a, PipelineConfig())
    assert info.value.stage == "census"


def test_missing_map_file_fails_in_rectify_stage(tmp_path, shift6):
    cfg = PipelineConfig(rectification_map=tmp_path / "none.rmap",
                         stages=Stages(rectify=True))
    with pytest.raises(StageError) as info:
        run_pipeline(shift6.left, shift6.right, cfg)
    assert info.value.stage == "rectify"


# -- configuration -------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(profile="ultra")
    with pytest.raises(ValueError):
        PipelineConfig(profile="base")  # default match has p=32
    with pytest.raises(ValueError):
        PipelineConfig(stages=Stages(rectify=True))
    with pytest.raises(ValueError):
        for_range(100)
    assert for_range(128, "base").match.iterations == 8


def test_parse_and_build_config(tmp_path):
    text = """
    # tuned for a narrow baseline
    P1 = 6
    P2 = 40
    o_d = 10
    n_i = 2
    profile = base
    q = 1.2
    t_c = off
    w_s = 0
    gap = no
    threads = 2
    """
    values = parse_config(text)
    assert values["P1"] == "6" and values["t_c"] == "off"
    cfg = build_config(values)
    assert (cfg.match.p1, cfg.match.p2, cfg.match.disparity_offset) == (6, 40, 10)
    assert cfg.match.parallelism == 16 and cfg.match.max_disparity == 10 + 32 - 1
    assert cfg.post.uniqueness_factor == 1.2
    assert cfg.post.consistency_threshold is None
    assert cfg.filter.speckle_window == 0
    assert cfg.stages.gap is False and cfg.stages.noise is True
    assert cfg.threads == 2

    path = tmp_path / "c.cfg"
    path.write_text(text)
    assert load_config(path) == cfg


@pytest.mark.parametrize("text", ["bogus = 1", "P1 = x", "P1 = 50\nP2 = 40", "P1 5",
                                  "profile = mega"])
def test_bad_config_rejected(text):
    with pytest.raises(ValueError):
        build_config(parse_config(text))


# -- scenes ---------------------------------------------------------------------

def test_scenes_are_seed_deterministic():
    a = gen_test_scene("two-plane:4,20", 80, 40, seed=9)
    b = gen_test_scene("two-plane:4,20", 80, 40, seed=9)
    c = gen_test_scene("two-plane:4,20", 80, 40, seed=10)
    assert a.left == b.left and a.right == b.right and a.truth == b.truth
    assert a.left != c.left


def test_two_plane_shadow_geometry():
    scene = two_plane_scene(4, 20, 80, 40, seed=0)
    cols = np.nonzero(scene.occluded.any(axis=0))[0]
    assert cols.tolist() == list(range(20 - 16, 20))
    assert not scene.truth.valid[scene.occluded].any()
    assert scene.truth.data[20, 40] == 20 * 16 and scene.truth.data[5, 40] == 4 * 16


def test_shift_scene_geometry():
    scene = shift_scene(5.5, 40, 20, seed=0)
    assert (scene.truth.data[:, 6:] == 88).all()
    assert not scene.truth.valid[:, :6].any()
    # integer shifts reproduce the left texture exactly in the right view
    scene = shift_scene(3, 40, 20, seed=0)
    assert np.array_equal(scene.right.data[:, :-3], scene.left.data[:, 3:])


def test_parse_kind():
    assert parse_kind("shift:6") == ("shift", (6.0,))
    assert parse_kind("twoplane:4,20") == ("two-plane", (4.0, 20.0))
    for bad in ("cube", "shift", "noise:3"):
        with pytest.raises(ValueError):
            parse_kind(bad)


# -- evaluation ----------------------------------------------------------------

def test_evaluate_identity():
    truth = DisparityMap.from_float(np.full((4, 5), 3.25))
    m = evaluate(truth, truth)
    assert m.density == 1.0 and m.mae == 0.0 and m.evaluated == 20
    assert all(v == 0.0 for v in m.bad.values())


def test_evaluate_all_invalid_is_absent():
    truth = DisparityMap.from_float(np.full((4, 5), 3.0))
    m = evaluate(DisparityMap.invalid(4, 5), truth)
    assert m.density == 0.0 and m.evaluated == 0
    assert m.mae is None and all(v is None for v in m.bad.values())


def test_evaluate_half_off_by_three_quarters():
    truth = DisparityMap.from_float(np.full((2, 4), 8.0))
    est = np.full((2, 4), 8.0)
    est[0] += 0.75
    m = evaluate(DisparityMap.from_float(est), truth)
    assert m.bad[0.5] == 0.5 and m.bad[1.0] == 0.0 and m.bad[2.0] == 0.0
    assert m.mae == pytest.approx(0.375)


def test_evaluate_mask_excludes():
    truth = DisparityMap.from_float(np.full((2, 2), 4.0))
    est = DisparityMap.from_float(np.array([[4.0, 9.0], [4.0, 4.0]]))
    mask = np.array([[False, True], [False, False]])
    assert evaluate(est, truth, mask).mae == 0.0


# -- throughput -------------------------------------------------------------------

def test_bench_report_arithmetic():
    r = BenchReport.from_rate(640, 480, 4, 32, frames=100, wall_time=1.0, frame_rate=100)
    assert r.output_disparities_per_s == 30_720_000
    assert r.disparity_evals_per_s == 30_720_000 * 128
    r = BenchReport.from_rate(640, 480, 8, 32, frames=70, wall_time=1.0, frame_rate=70)
    assert r.disparity_evals_per_s == pytest.approx(5.5e9, rel=0.01)
    r = BenchReport.from_rate(320, 240, 1, 16, frames=1, wall_time=0.25)
    assert r.frame_rate == 4.0
    assert r.identity_holds()


def test_benchmark_runs(shift6):
    report = benchmark([(shift6.left, shift6.right)], for_range(32), repetitions=2)
    assert report.frames == 2 and report.wall_time > 0
    assert report.identity_holds()
    assert "frame_rate=" in "\n".join(report.key_values())
    assert "disparity evaluations" in report.table()
