import math

import numpy as np
import pytest

import imloc


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return imloc.Pose(list(q), [0.0, 0.0, 0.0]).R


def test_quantization_respects_the_bound():
    rng = np.random.default_rng(0)
    depth = np.exp(rng.uniform(math.log(0.25), math.log(128.0), size=(50, 40))).astype(np.float32)
    codes = imloc.quantize_depth(depth)
    assert codes.dtype == np.uint16 and codes.shape == depth.shape
    back = imloc.dequantize_depth(codes)
    rel = np.abs(back.astype(np.float64) - depth) / depth
    assert rel.max() <= imloc.quantization_error_bound() + 1e-6
    assert imloc.quantization_error_bound() < 0.014


def test_invalid_depth_maps_to_code_zero():
    depth = np.array([[0.0, 1.0]], dtype=np.float32)
    codes = imloc.quantize_depth(depth)
    assert codes[0, 0] == 0 and codes[0, 1] > 0
    assert imloc.dequantize_depth(codes)[0, 0] == 0.0


def test_p3p_recovers_the_pose():
    rng = np.random.default_rng(1)
    truth = imloc.Pose.from_matrix(random_rotation(rng), rng.uniform(-1, 1, 3))
    cam_points = np.column_stack([rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3), rng.uniform(2, 6, 3)])
    world = np.array([truth.inverse().apply(p) for p in cam_points])
    bearings = cam_points / np.linalg.norm(cam_points, axis=1, keepdims=True)
    solutions = imloc.solve_p3p(bearings, world)
    errors = [imloc.pose_error(s, truth) for s in solutions]
    assert min(r + t for r, t in errors) < 1e-6


def test_ransac_pnp_rejects_outliers():
    rng = np.random.default_rng(2)
    cam = imloc.CameraIntrinsics(fx=500, fy=500, cx=319.5, cy=239.5, width=640, height=480)
    truth = imloc.Pose.from_matrix(random_rotation(rng), rng.uniform(-1, 1, 3))
    n = 400
    pixels = np.column_stack([rng.uniform(0, 639, n), rng.uniform(0, 479, n)])
    depths = rng.uniform(2, 10, n)
    points = np.array([truth.inverse().apply(imloc.unproject(cam, px, d)) for px, d in zip(pixels, depths)])
    outliers = rng.random(n) < 0.3
    pixels[outliers] = np.column_stack([rng.uniform(0, 639, outliers.sum()), rng.uniform(0, 479, outliers.sum())])
    cfg = imloc.RansacConfig()
    cfg.seed = 7
    result = imloc.ransac_pnp(points, pixels, camera=cam, config=cfg)
    rot, trans = imloc.pose_error(result["pose"], truth)
    assert rot < 1e-6 and trans < 1e-6
    assert result["converged"]
    assert result["inliers"][~outliers].all()
    # A redrawn pixel can land within the threshold by chance.
    assert result["inliers"][outliers].sum() <= 3


def test_required_iterations_matches_the_closed_form():
    for eps in (0.5, 0.3, 0.1):
        expected = math.ceil(math.log(1e-4) / math.log(1 - eps**3))
        assert imloc.required_iterations(eps) == min(expected, 100000)


def test_descriptor_index_matches_brute_force():
    rng = np.random.default_rng(3)
    db = rng.normal(size=(200, 16)).astype(np.float32)
    index = imloc.DescriptorIndex(16)
    for i, d in enumerate(db):
        index.add(f"e{i:03d}", d)
    assert len(index) == 200
    unit = db / np.linalg.norm(db, axis=1, keepdims=True)
    for _ in range(10):
        q = rng.normal(size=16).astype(np.float32)
        sims = unit @ (q / np.linalg.norm(q))
        expected = [f"e{i:03d}" for i in np.argsort(-sims, kind="stable")[:5]]
        assert [h[0] for h in index.top_k(q, 5)] == expected
    with pytest.raises(imloc.RetrievalError):
        index.add("zero", np.zeros(16, np.float32))


def test_pipeline_localizes_exported_scene(tmp_path):
    scene = imloc.Scene(imloc.SceneSpec.level_aligned(6, 5))
    imloc.export_scene(scene, tmp_path / "scene")
    field = imloc.read_field(tmp_path / "scene" / "fields" / imloc.field_file_name("db_000", "db_001"))
    assert field["targets"].shape == (field["grid_width"] * field["grid_height"], 2)

    built, fractions = imloc.build_map(tmp_path / "scene")
    assert [f[0] for f in fractions] == built.ids
    imloc.write_map(built, tmp_path / "map")
    stats = imloc.map_stats(tmp_path / "map")
    assert stats["total"] == sum(stats[k] for k in ("rgb", "depth", "descriptors", "manifest", "other"))

    loaded = imloc.read_map(tmp_path / "map")
    assert loaded.ids == built.ids
    localizer = imloc.Localizer(loaded)
    results = localizer.localize_export(tmp_path / "scene")
    assert [r["status"] for r in results] == ["ok"] * 6

    gt = dict(imloc.read_poses(tmp_path / "scene" / "gt_poses.txt"))
    report = imloc.evaluate([r["pose"] for r in results], [gt[r["id"]] for r in results], "0.0001:0.0001")
    assert report["recall"][0][2] == 1.0
    assert report["num_success"] == 6


def test_reduce_map_drops_keyframes(tmp_path):
    scene = imloc.Scene(imloc.SceneSpec.level_aligned(0, 1))
    imloc.export_scene(scene, tmp_path / "scene")
    built, _ = imloc.build_map(tmp_path / "scene")
    reduced = imloc.reduce_map(built, keyframe_stride=2, depth_bits=6)
    assert len(reduced) == 3
    assert reduced.entry(reduced.ids[0])["depth_bits"] == 6


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(imloc.IoError):
        imloc.read_map(tmp_path / "missing")
    with pytest.raises(OSError):
        imloc.read_map(tmp_path / "missing")
    with pytest.raises(imloc.ConfigError):
        imloc.evaluate([], [], "1:0")
    (tmp_path / "bad.imlc").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(imloc.ParseError):
        imloc.read_field(tmp_path / "bad.imlc")


def test_acceptance_subset(tmp_path):
    results = imloc.run_acceptance(["adaptive-stopping"], tmp_path)
    assert [r["name"] for r in results] == ["adaptive-stopping"]
    assert results[0]["pass"], results[0]["detail"]
    assert len(imloc.acceptance_criteria()) == 11
