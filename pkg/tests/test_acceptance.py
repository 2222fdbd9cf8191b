"""Exit criteria. Each test carries a ``criterion`` marker; the run ends with
one PASS/FAIL line per criterion (see conftest.py)."""

import json
import struct
import time

import numpy as np
import pytest

from synthdepth.cli import main
from synthdepth.dataset import Entry, compose_manifest
from synthdepth.depthio import (DepthMap, PointCloud, dequantize_depth, quantize_depth,
                                read_kitti_bin, read_pfm, write_kitti_bin, write_pfm)
from synthdepth.errors import DataError, FormatError, LengthError
from synthdepth.geometry import CameraModel, RigidTransform, fov_to_focal, project_cloud, project_point
from synthdepth.metrics import (LossWeights, PairedDepthSamples, adversarial_loss, cyclegan_objective,
                                densedepth_loss, gradient_loss, l1_depth_loss, pair_lidar_with_prediction,
                                rel_error, ssim, ssim_loss)
from synthdepth.synth import (LidarConfig, Scene, Box, default_camera, generate_frame, lidar_mount, look_at,
                              procedural_scene, random_camera_pose, raycast_depth)

C1 = "1. projection correctness"
C2 = "2. codec fidelity"
C3 = "3. quantization contract"
C4 = "4. metric identities"
C5 = "5. geometric analytics"
C6 = "6. end-to-end desk-scale pipeline"
C7 = "7. determinism"

F32_MAX = float(np.finfo(np.float32).max)
F32_TINY = float(np.finfo(np.float32).smallest_subnormal)


# -- 1 -------------------------------------------------------------------------

@pytest.mark.criterion(C1)
def test_projection_round_trip_10k():
    rng = np.random.default_rng(2024)
    cam = CameraModel(589.37, 589.37, 320.0, 240.0, 640, 480)
    n = 10_000
    u = rng.uniform(0, 640, n)
    v = rng.uniform(0, 480, n)
    d = rng.uniform(0.05, 50.0, n)
    # keep clear of the half-open edge where reprojection rounding can fall outside
    u = np.clip(u, 1e-6, 640 - 1e-6)
    v = np.clip(v, 1e-6, 480 - 1e-6)
    pts = np.stack([(u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d], axis=1)
    ident = RigidTransform.identity()

    t0 = time.perf_counter()
    got = project_cloud(cam, ident, PointCloud(pts))
    elapsed = time.perf_counter() - t0

    assert len(got) == n
    arr = np.array([p for _, p in got])
    assert np.max(np.abs(arr[:, 0] - u)) < 1e-6
    assert np.max(np.abs(arr[:, 1] - v)) < 1e-6
    assert np.max(np.abs(arr[:, 2] - d)) < 1e-6
    assert elapsed < 1.0


@pytest.mark.criterion(C1)
def test_project_cloud_equals_scalar_loop_10k():
    rng = np.random.default_rng(5)
    cam = CameraModel(500.0, 480.0, 320.0, 240.0, 640, 480)
    R = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    R *= np.sign(np.linalg.det(R))
    ext = RigidTransform(R, rng.uniform(-1, 1, 3))
    pts = rng.uniform(-20, 20, (10_000, 3))
    loop = [(i, p) for i, p in ((i, project_point(cam, ext, q)) for i, q in enumerate(pts)) if p is not None]
    assert project_cloud(cam, ext, PointCloud(pts)) == loop


# -- 2 -------------------------------------------------------------------------

def _payload(rng, shape):
    a = rng.uniform(0, 1e4, shape).astype(np.float32)
    flat = a.reshape(-1)
    specials = np.array([0.0, F32_MAX, F32_TINY, 1.0, np.float32(1e-30)], np.float32)
    k = min(len(flat), len(specials))
    flat[rng.choice(len(flat), k, replace=False)] = specials[:k]
    return a


@pytest.mark.criterion(C2)
def test_pfm_round_trip_1000_payloads():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a = _payload(rng, (int(rng.integers(1, 20)), int(rng.integers(1, 20))))
        back = read_pfm(write_pfm(DepthMap(a)))
        assert back.values.tobytes() == a.tobytes()


@pytest.mark.criterion(C2)
def test_kitti_round_trip_1000_payloads():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(0, 50))
        rec = (rng.uniform(-1e4, 1e4, (n, 4))).astype("<f4")
        if n:
            flat = rec.reshape(-1)
            specials = np.array([0.0, -0.0, F32_MAX, -F32_MAX, F32_TINY], np.float32)
            k = min(len(flat), len(specials))
            flat[rng.choice(len(flat), k, replace=False)] = specials[:k]
        data = rec.tobytes()
        assert write_kitti_bin(read_kitti_bin(data)) == data


@pytest.mark.criterion(C2)
@pytest.mark.parametrize("reader,data,err", [
    (read_pfm, b"P6\n1 1\n255\n\x00\x00\x00", FormatError),
    (read_pfm, b"PF\n1 1\n-1.0\n" + b"\x00" * 12, FormatError),
    (read_pfm, b"Pf\n4 4\n-1.0\n" + b"\x00" * 60, LengthError),
    (read_pfm, b"Pf\n1 1\n-1.0\n" + struct.pack("<f", float("nan")), DataError),
    (read_kitti_bin, b"\x00" * 17, FormatError),
    (read_kitti_bin, struct.pack("<4f", float("inf"), 0, 0, 0), DataError),
])
def test_malformed_fixtures_rejected(reader, data, err):
    with pytest.raises(err):
        reader(data)


# -- 3 -------------------------------------------------------------------------

@pytest.mark.criterion(C3)
def test_truncation_rule():
    m = DepthMap(np.array([[12.0, 10.0]]))
    assert quantize_depth(m, 10.0).levels.tolist() == [[255, 255]]


@pytest.mark.criterion(C3)
def test_monotone_and_error_bound_dense_sweep():
    for max_range in (10.0, 3.7, 80.0):
        v = np.linspace(0, 1.3 * max_range, 1_000_001)
        q = quantize_depth(DepthMap(v.reshape(1, -1)), max_range)
        lv = q.levels[0].astype(int)
        assert np.all(np.diff(lv) >= 0)
        back = dequantize_depth(q).values[0]
        assert np.max(np.abs(back - np.minimum(v, max_range))) <= max_range / 255


# -- 4 -------------------------------------------------------------------------

@pytest.mark.criterion(C4)
def test_rel_error_identities():
    assert rel_error(PairedDepthSamples.from_pairs([(1.0, 1.0), (7.5, 7.5)])) == 0.0
    assert rel_error(PairedDepthSamples.from_pairs([(2, 1), (4, 5)])) == pytest.approx(0.375, abs=1e-15)
    rng = np.random.default_rng(3)
    ref, pred = rng.uniform(0.1, 10, 1000), rng.uniform(0, 10, 1000)
    base = rel_error(PairedDepthSamples(ref, pred))
    for s in (0.001, 0.5, 3.0, 1e4):
        assert abs(rel_error(PairedDepthSamples(s * ref, s * pred)) - base) <= 1e-12


@pytest.mark.criterion(C4)
def test_loss_decompositions():
    rng = np.random.default_rng(4)
    y, yhat = rng.random((32, 40)), rng.random((32, 40))
    w = LossWeights()
    parts = w.lambda_depth * l1_depth_loss(y, yhat) + gradient_loss(y, yhat) + ssim_loss(y, yhat)
    assert abs(densedepth_loss(y, yhat, w) - parts) <= 1e-12
    args = (-0.7, -1.1, 0.23, 0.41)
    expected = args[0] + args[1] + w.lambda_cyc * args[2] + w.lambda_idt * args[3]
    assert abs(cyclegan_objective(*args, w) - expected) <= 1e-12
    assert abs(cyclegan_objective(-1, -1, 0.2, 0.1, w) - 0.5) <= 1e-12


@pytest.mark.criterion(C4)
def test_ssim_self_and_adversarial_half():
    x = np.random.default_rng(6).random((48, 64))
    assert abs(ssim(x, x) - 1.0) <= 1e-9
    # 2 ln(0.5) = -1.3862943611...
    assert abs(adversarial_loss(np.full(100, 0.5), np.full(37, 0.5)) - (-1.386294)) <= 1e-6


# -- 5 -------------------------------------------------------------------------

@pytest.mark.criterion(C5)
def test_focal_from_57_degrees():
    assert abs(fov_to_focal(57.0, 640) - 589.37) <= 0.01


@pytest.mark.criterion(C5)
def test_perspective_planar_ratio_64x48():
    cam = default_camera(64, 48)
    for seed in range(3):
        scene = procedural_scene(seed)
        pose = random_camera_pose(scene, np.random.default_rng(seed))
        planar = raycast_depth(scene, cam, pose, "planar").values
        persp = raycast_depth(scene, cam, pose, "perspective").values
        u = (np.arange(64) + 0.5 - cam.cx) / cam.fx
        v = (np.arange(48) + 0.5 - cam.cy) / cam.fy
        uu, vv = np.meshgrid(u, v)
        inv_cos = np.sqrt(1 + uu ** 2 + vv ** 2)
        assert np.max(np.abs(persp / planar - inv_cos)) <= 1e-9


@pytest.mark.criterion(C5)
def test_fronto_parallel_wall_constant():
    scene = Scene(Box([0, 0, 0], [10, 20, 10]), [], light=[5, 10, 9])
    d = raycast_depth(scene, default_camera(64, 48), look_at([4, 10, 5], [10, 10, 5]), "planar").values
    assert np.all(np.abs(d - 6.0) <= 1e-12)


# -- 6 -------------------------------------------------------------------------

@pytest.mark.criterion(C6)
def test_end_to_end_50_frames():
    t0 = time.perf_counter()
    cam = default_camera(64, 48)
    cfg = LidarConfig(channels=8)
    pooled, per_frame = [], []
    frames = 0
    for s, n_frames in zip(range(3), (17, 17, 16)):
        scene = procedural_scene(s)
        rng = np.random.default_rng(1000 + s)
        for _ in range(n_frames):
            pose = random_camera_pose(scene, rng)
            frame = generate_frame(scene, cam, pose, lidar_mount(), cfg)
            pred = quantize_depth(frame.depth_planar, 10.0)
            proj = [(i, p) for i, p in project_cloud(cam, frame.extrinsics, frame.cloud) if p.d > 1.0]
            samples = pair_lidar_with_prediction(pred, proj, 10.0, "metric")
            frames += 1
            # a frame staring into a nearby obstacle can have no point beyond 1 m
            if len(samples.reference):
                pooled.append(samples)
                per_frame.append(rel_error(samples))
    ref = np.concatenate([s.reference for s in pooled])
    prd = np.concatenate([s.predicted for s in pooled])
    mean_rel = rel_error(PairedDepthSamples(ref, prd))
    elapsed = time.perf_counter() - t0
    print(f"\nend-to-end: {frames} frames, {len(ref)} points, pooled rel {100 * mean_rel:.3f}%, "
          f"per-frame mean {100 * sum(per_frame) / len(per_frame):.3f}% over {len(per_frame)} frames, "
          f"{elapsed:.2f} s")
    assert frames == 50
    assert mean_rel <= 0.03
    assert elapsed < 10.0


# -- 7 -------------------------------------------------------------------------

@pytest.mark.criterion(C7)
def test_compose_byte_identical():
    sources = [(tag, [Entry(f"{tag}/{i}", f"{tag}/r{i}.png", f"{tag}/d{i}.png", tag) for i in range(500)])
               for tag in ("nyu", "ue", "gan")]
    counts = {"nyu": 100, "ue": 250, "gan": 37}
    a = compose_manifest(sources, counts, seed=0xDEADBEEF).to_json().encode()
    b = compose_manifest(sources, counts, seed=0xDEADBEEF).to_json().encode()
    assert a == b


def _pipeline(root, threads, monkeypatch):
    # relative paths so that reports echoing input names match across runs
    root.mkdir()
    monkeypatch.chdir(root)
    root = type(root)(".")
    scene = procedural_scene(11)
    pose = random_camera_pose(scene, np.random.default_rng(4))
    (root / "scene.json").write_text(json.dumps(scene.to_dict()))
    (root / "pose.json").write_text(json.dumps(pose.to_dict()))
    outputs = {k: root / v for k, v in (("rgb", "rgb.png"), ("pfm", "d.pfm"), ("png", "d.png"),
                                        ("cloud", "c.bin"), ("calib", "k.json"), ("eval", "eval.json"),
                                        ("proj", "proj.json"), ("metrics", "metrics.json"),
                                        ("conv", "conv.png"))}
    steps = [
        ["synth", "--scene", root / "scene.json", "--pose", root / "pose.json", "--size", "64x48",
         "--depth-mode", "planar", "--lidar", "--channels", "8", "--threads", threads,
         "--rgb", outputs["rgb"], "--depth-pfm", outputs["pfm"], "--depth-png", outputs["png"],
         "--cloud", outputs["cloud"], "--calib", outputs["calib"]],
        ["convert", "pfm-to-png8", outputs["pfm"], outputs["conv"]],
        ["project", "--cloud", outputs["cloud"], "--calib", outputs["calib"], "--out", outputs["proj"]],
        ["eval", "--pred", outputs["png"], "--cloud", outputs["cloud"], "--calib", outputs["calib"],
         "--space", "metric", "--threads", threads, "--out", outputs["eval"]],
        ["metrics", outputs["pfm"], outputs["png"], "--out", outputs["metrics"]],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0
    return {k: p.read_bytes() for k, p in outputs.items()}


@pytest.mark.criterion(C7)
def test_cli_pipeline_byte_identical(tmp_path, capsys, monkeypatch):
    a = _pipeline(tmp_path / "a", 1, monkeypatch)
    b = _pipeline(tmp_path / "b", 1, monkeypatch)
    c = _pipeline(tmp_path / "c", 4, monkeypatch)
    capsys.readouterr()
    for k in a:
        assert a[k] == b[k] == c[k], k
    assert json.loads(a["eval"])["rel"] < 0.05
