"""Procedural scenes: a textured wall, camera trajectories and rendered datasets.

The scene is the plane ``z = distance`` in world coordinates carrying a
band-limited value-noise texture.  Because the texture is a function of
continuous wall coordinates, every frame is rendered exactly from its pose and
depth is known in closed form.
"""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._validation import check_scalar
from .exceptions import DomainError
from .flow import FlowField, LkParams, dense_flow, lucas_kanade
from .geometry import CameraModel, DepthMap, Pose, _normalized_rays
from .imaging import StructureField, read_pgm, structure_field, to_eigenbasis, write_pgm
from .likelihood import TrainingSet

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)
_KY = np.uint64(0xD6E8FEB86659FD93)
_KO = np.uint64(0xA0761D6478BD642F)


@dataclass(frozen=True)
class SceneSpec:
    """Wall distance (m), texture band (cycles/m), contrast (intensity) and seed.

    ``coverage`` in (0, 1] is the fraction of the wall carrying texture; the
    rest fades to flat grey through a coarse seeded mask, giving the
    low-texture regions that dense flow fills with near-zero vectors.
    """

    distance: float = 5.0
    band_low: float = 0.25
    band_high: float = 2.0
    contrast: float = 60.0
    seed: int = 0
    coverage: float = 1.0

    def __post_init__(self):
        check_scalar(self.distance, "distance", lo=0.0, lo_open=True)
        check_scalar(self.band_low, "band_low", lo=0.0, lo_open=True)
        if not self.band_high > self.band_low:
            raise DomainError("band_high must exceed band_low")
        check_scalar(self.contrast, "contrast", lo=0.0, hi=127.0, lo_open=True)
        check_scalar(self.seed, "seed", lo=0, integer=True)
        check_scalar(self.coverage, "coverage", lo=0.0, hi=1.0, lo_open=True)


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "straight"
    span: float = 10.0
    frames: int = 50
    frame_rate: float = 60.0

    def __post_init__(self):
        if self.kind not in ("straight", "fig8"):
            raise DomainError(f"unknown trajectory kind {self.kind!r}")
        check_scalar(self.span, "span", lo=0.0, lo_open=True)
        check_scalar(self.frames, "frames", lo=2, integer=True)
        check_scalar(self.frame_rate, "frame_rate", lo=0.0, lo_open=True)


def _hash_uniform(ix, iy, octave, seed):
    """Deterministic uniform values in [-1, 1) for integer lattice nodes (splitmix64)."""
    with np.errstate(over="ignore"):
        key = (ix.astype(np.int64).view(np.uint64) * _M1
               ^ iy.astype(np.int64).view(np.uint64) * _KY
               ^ np.uint64(octave) * _KO
               ^ np.uint64(seed) * _M3)
        key = key + _M1
        key = (key ^ (key >> np.uint64(30))) * _M2
        key = (key ^ (key >> np.uint64(27))) * _M3
        key = key ^ (key >> np.uint64(31))
    return (key >> np.uint64(11)).astype(np.float64) * (2.0 / 2.0 ** 53) - 1.0


def _value_noise(x, y, freq, octave, seed):
    gx, gy = x * freq, y * freq
    x0, y0 = np.floor(gx), np.floor(gy)
    fx, fy = gx - x0, gy - y0
    ix, iy = x0.astype(np.int64), y0.astype(np.int64)
    v00 = _hash_uniform(ix, iy, octave, seed)
    v10 = _hash_uniform(ix + 1, iy, octave, seed)
    v01 = _hash_uniform(ix, iy + 1, octave, seed)
    v11 = _hash_uniform(ix + 1, iy + 1, octave, seed)
    top = v00 * (1.0 - fx) + v10 * fx
    bot = v01 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


class Texture:
    """Callable wall texture: intensity deviation ``f(x, y)`` added to mid-grey.

    Octaves are spaced by factors of two from ``band_low`` up to ``band_high``
    with equal weights summing to one, so ``|f| <= contrast`` everywhere.
    """

    MEAN = 128.0
    MASK_FREQUENCY = 0.3
    _MASK_OCTAVE = 1000

    def __init__(self, spec):
        self.spec = spec
        n = int(np.floor(np.log2(spec.band_high / spec.band_low))) + 1
        self.frequencies = spec.band_low * 2.0 ** np.arange(n)
        self.weights = np.full(n, 1.0 / n)
        self._mask_threshold = None
        if spec.coverage < 1.0:
            # threshold at the empirical quantile so about ``coverage`` of the wall is textured
            g = np.linspace(-200.0, 200.0, 257)
            px, py = np.meshgrid(g, g)
            probe = _value_noise(px, py, self.MASK_FREQUENCY, self._MASK_OCTAVE, spec.seed)
            self._mask_threshold = float(np.quantile(probe, 1.0 - spec.coverage))

    def deviation(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        acc = np.zeros(np.broadcast(x, y).shape)
        for o, (f, w) in enumerate(zip(self.frequencies, self.weights)):
            acc += w * _value_noise(x, y, f, o, self.spec.seed)
        out = self.spec.contrast * acc
        if self.spec.coverage < 1.0:
            out = out * self.mask(x, y)
        return out

    def mask(self, x, y):
        """Coverage mask in [0, 1]: a smoothstep of coarse value noise."""
        if self._mask_threshold is None:
            return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        m = _value_noise(x, y, self.MASK_FREQUENCY, self._MASK_OCTAVE, self.spec.seed)
        s = np.clip((m - self._mask_threshold) / 0.2 + 0.5, 0.0, 1.0)
        return s * s * (3.0 - 2.0 * s)

    def __call__(self, x, y):
        return self.MEAN + self.deviation(x, y)


def make_texture(spec):
    return Texture(spec)


def _wall_hits(scene, camera, pose):
    """Wall coordinates and camera z-depth of every pixel's ray, row-major."""
    rays = _normalized_rays(camera, camera.pixel_grid())
    world = rays @ pose.rotation().T
    dz = world[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = (scene.distance - pose.position[2]) / dz
    if np.any(~np.isfinite(scale)) or np.any(scale <= 0.0):
        raise DomainError("wall is not in front of the camera at every pixel")
    hits = pose.position + scale[:, None] * world
    return hits, scale


def render_frame(scene, camera, pose, *, texture=None, quantize=True):
    """Render ``(image, DepthMap)`` of the wall seen from ``pose``.

    Intensities are clipped to [0, 255] and, by default, rounded to 8 bits so
    the in-memory frame equals its PGM file bit for bit.
    """
    texture = texture or make_texture(scene)
    hits, z = _wall_hits(scene, camera, pose)
    img = np.clip(texture(hits[:, 0], hits[:, 1]), 0.0, 255.0)
    if quantize:
        img = np.rint(img)
    h, w = camera.shape
    return img.reshape(h, w), DepthMap((1.0 / z).reshape(h, w))


def render_flow(scene, camera, pose_a, pose_b):
    """Ground-truth flow from frame ``a`` to ``b`` by intersecting rays with the wall
    in world coordinates and re-projecting (independent of the inverse-depth path).
    """
    hits, _ = _wall_hits(scene, camera, pose_a)
    rot_b = pose_b.rotation()
    cam_b = (hits - pose_b.position) @ rot_b
    c = camera.principal_point
    f = camera.focal
    valid = cam_b[:, 2] > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = np.column_stack([c[0] + f * cam_b[:, 0] / cam_b[:, 2],
                                c[1] + f * cam_b[:, 1] / cam_b[:, 2]])
    pix = camera.pixel_grid()
    vec = np.where(valid[:, None], proj - pix, np.nan)
    return FlowField(pix, vec, valid, grid_shape=camera.shape)


def make_trajectory(spec):
    """Camera poses for a trajectory spec.

    ``straight`` moves along world ``+x`` at fixed attitude.  ``fig8`` follows
    a lemniscate of Bernoulli of width ``span`` in the plane parallel to the
    wall, starting and ending at its crossing point, with roll keeping the
    image ``u`` axis tangent to the path.
    """
    n = spec.frames
    if spec.kind == "straight":
        xs = np.linspace(0.0, spec.span, n)
        return [Pose([x, 0.0, 0.0], [0.0, 0.0, 0.0]) for x in xs]
    a = spec.span / 2.0
    s = np.linspace(0.0, 2.0 * np.pi, n) + np.pi / 2.0
    den = 1.0 + np.sin(s) ** 2
    x = a * np.cos(s) / den
    y = a * np.sin(s) * np.cos(s) / den
    # analytic tangent of the lemniscate
    dx = a * (-np.sin(s) * den - np.cos(s) * 2.0 * np.sin(s) * np.cos(s)) / den ** 2
    dy = a * (np.cos(2.0 * s) * den - np.sin(s) * np.cos(s) * 2.0 * np.sin(s) * np.cos(s)) / den ** 2
    roll = np.unwrap(np.arctan2(dy, dx))
    x[-1], y[-1], roll[-1] = x[0], y[0], roll[0] + np.round((roll[-1] - roll[0]) / (2 * np.pi)) * 2 * np.pi
    return [Pose([xi, yi, 0.0], [0.0, 0.0, ri]) for xi, yi, ri in zip(x, y, roll)]


def sparse_grid(camera, step=8, margin=None):
    margin = step // 2 if margin is None else margin
    return camera.pixel_grid(step=step, margin=margin)


def _frame_files(i):
    return {
        "frame": f"frame_{i:05d}.pgm",
        "depth": f"depth_{i:05d}.f32",
        "gtflow": f"gtflow_{i:05d}.flf",
        "flow_dense": f"flow_dense_{i:05d}.flf",
        "flow_sparse": f"flow_sparse_{i:05d}.flf",
        "structure": f"structure_{i:05d}.f32",
    }


@dataclass
class FramePair:
    """Everything measured on the pair (index, index + 1), aligned to its first frame."""

    index: int
    image: np.ndarray
    depth: DepthMap
    structure: StructureField
    gt: FlowField
    dense: FlowField
    sparse: FlowField

    def flow(self, kind):
        if kind not in ("gt", "dense", "sparse"):
            raise DomainError(f"unknown flow kind {kind!r}")
        return getattr(self, kind)


def pair_indices(n_frames, pair_step=1, pair_offset=0):
    """First-frame indices of the pairs kept when only every ``pair_step``-th is used."""
    check_scalar(pair_step, "pair_step", lo=1, integer=True)
    check_scalar(pair_offset, "pair_offset", lo=0, integer=True)
    return list(range(pair_offset % pair_step, n_frames - 1, pair_step))


def render_pairs(scene, trajectory, camera=None, lk_params=None, *, sparse_step=8,
                 structure_window=21, dense_method="ilk", pair_step=1, pair_offset=0):
    """Render a trajectory in memory and yield a :class:`FramePair` per kept pair.

    Only frames belonging to a kept pair are rendered, so a large ``pair_step``
    samples long trajectories cheaply (used for calibration sets).
    """
    camera = camera or CameraModel()
    lk_params = lk_params or LkParams()
    texture = make_texture(scene)
    poses = make_trajectory(trajectory)
    grid = sparse_grid(camera, sparse_step)
    cache = {}

    def frame(i):
        # consecutive pairs share a frame; anything older is never needed again
        for old in [k for k in cache if k < i]:
            del cache[old]
        if i not in cache:
            cache[i] = render_frame(scene, camera, poses[i], texture=texture)
        return cache[i]

    for i in pair_indices(len(poses), pair_step, pair_offset):
        img, depth = frame(i)
        nxt, _ = frame(i + 1)
        yield FramePair(
            index=i, image=img, depth=depth,
            structure=structure_field(img, structure_window),
            gt=render_flow(scene, camera, poses[i], poses[i + 1]),
            dense=dense_flow(img, nxt, lk_params, method=dense_method),
            sparse=lucas_kanade(img, nxt, grid, lk_params),
        )


def build_dataset(root, scene, trajectory, camera=None, lk_params=None, *, sparse_step=8,
                  structure_window=21, dense_method="ilk", pair_step=1, pair_offset=0):
    """Render a trajectory and write frames, depth, structure and flows to ``root``.

    File ``i`` of the flow families holds the pair (i, i+1); the per-frame
    files of frame ``i`` are written for every kept pair.  Returns the
    manifest dictionary, also written to ``manifest.json``.
    """
    camera = camera or CameraModel()
    lk_params = lk_params or LkParams()
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    poses = make_trajectory(trajectory)
    kept = []
    for pair in render_pairs(scene, trajectory, camera, lk_params, sparse_step=sparse_step,
                             structure_window=structure_window, dense_method=dense_method,
                             pair_step=pair_step, pair_offset=pair_offset):
        names = _frame_files(pair.index)
        sf = pair.structure
        write_pgm(root / names["frame"], pair.image)
        _write_f32(root / names["depth"], pair.depth.inverse_depth)
        _write_f32(root / names["structure"], np.stack([sf.t1, sf.t2, sf.phi], axis=-1))
        pair.gt.save(root / names["gtflow"])
        pair.dense.save(root / names["flow_dense"])
        pair.sparse.save(root / names["flow_sparse"])
        kept.append(pair.index)
    manifest = {
        "format": "lcmflow-dataset/1",
        "scene": asdict(scene),
        "trajectory": asdict(trajectory),
        "camera": camera.to_dict(),
        "lk_params": asdict(lk_params),
        "dense_method": dense_method,
        "sparse_step": sparse_step,
        "structure_window": structure_window,
        "seed": scene.seed,
        "frames": len(poses),
        "pair_step": pair_step,
        "pairs": len(kept),
        "pair_indices": kept,
        "poses": [[float(v) for v in p.as_vector()] for p in poses],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _write_f32(path, arr):
    np.ascontiguousarray(arr, dtype="<f4").tofile(path)


def _read_f32(path, shape):
    data = np.fromfile(path, dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise DomainError(f"{path}: expected {int(np.prod(shape))} floats, found {data.size}")
    return data.reshape(shape).astype(np.float64)


class SynthDataset:
    """Read access to a dataset directory written by :func:`build_dataset`."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.is_file():
            raise FileNotFoundError(f"{self.root}: no manifest.json")
        self.manifest = json.loads(path.read_text())
        self.camera = CameraModel(**self.manifest["camera"])
        self.poses = [Pose.from_vector(v) for v in self.manifest["poses"]]
        self.scene = SceneSpec(**self.manifest["scene"])
        self.trajectory = TrajectorySpec(**self.manifest["trajectory"])

    @property
    def pair_indices(self):
        return list(self.manifest.get("pair_indices", range(self.manifest["pairs"])))

    @property
    def n_pairs(self):
        return len(self.pair_indices)

    @property
    def consecutive(self):
        """True when the dataset holds every pair of its trajectory (odometry-ready)."""
        return self.pair_indices == list(range(len(self.poses) - 1))

    def _path(self, kind, i):
        path = self.root / _frame_files(i)[kind]
        if not path.is_file():
            raise FileNotFoundError(f"missing dataset file {path}")
        return path

    def image(self, i):
        return read_pgm(self._path("frame", i))

    def depth(self, i):
        return DepthMap(_read_f32(self._path("depth", i), self.camera.shape))

    def structure(self, i):
        arr = _read_f32(self._path("structure", i), self.camera.shape + (3,))
        return StructureField(arr[..., 0], arr[..., 1], arr[..., 2])

    def flow(self, kind, i):
        """Flow of pair (i, i+1); ``kind`` is gt, dense or sparse."""
        if kind == "gt":
            return FlowField.load(self._path("gtflow", i), grid_shape=self.camera.shape)
        if kind == "dense":
            return FlowField.load(self._path("flow_dense", i), grid_shape=self.camera.shape)
        if kind == "sparse":
            return FlowField.load(self._path("flow_sparse", i))
        raise DomainError(f"unknown flow kind {kind!r}")

    def pairs(self, kind="dense", stride=1):
        """Yield ``(flow, structure, depth)`` for every stored pair, in order."""
        for i in self.pair_indices:
            yield thin_flow(self.flow(kind, i), stride), self.structure(i), self.depth(i)


def thin_flow(flow, stride):
    """Keep gridded samples whose pixel coordinates are both multiples of ``stride``.

    Sparse (non-gridded) flow is returned untouched.
    """
    if stride <= 1 or flow.grid_shape is None:
        return flow
    return flow.subset(np.all(np.mod(flow.positions, stride) == 0, axis=1))


def pair_errors(measured, gt, structure):
    """Eigenbasis errors and textures for one pair, flattened per component.

    Samples invalid in either field (including ground truth leaving the image)
    are skipped.  ``gt`` must be a dense grid; it is looked up at the measured
    positions.
    """
    h, w = gt.grid_shape
    u = np.rint(measured.positions[:, 0]).astype(int)
    v = np.rint(measured.positions[:, 1]).astype(int)
    flat = v * w + u
    gt_vec = gt.vectors[flat]
    end = measured.positions + gt_vec
    ok = (measured.valid & gt.valid[flat] & (end[:, 0] >= 0) & (end[:, 0] <= w - 1)
          & (end[:, 1] >= 0) & (end[:, 1] <= h - 1))
    t1, t2, phi = structure.sample(measured.positions[ok])
    z = to_eigenbasis(measured.vectors[ok] - gt_vec[ok], phi)
    return TrainingSet(z.ravel(), np.column_stack([t1, t2]).ravel())


def collect_training_set(datasets, kind="dense"):
    """Concatenate :func:`pair_errors` over every pair of every dataset.

    Items may be :class:`SynthDataset` directories or iterables of
    :class:`FramePair` (e.g. from :func:`render_pairs`).
    """
    zs, ts = [], []
    for ds in datasets:
        if isinstance(ds, SynthDataset):
            parts = (pair_errors(ds.flow(kind, i), ds.flow("gt", i), ds.structure(i))
                     for i in ds.pair_indices)
        else:
            parts = (pair_errors(p.flow(kind), p.gt, p.structure) for p in ds)
        for part in parts:
            zs.append(part.z)
            ts.append(part.t)
    if not zs:
        return TrainingSet(np.empty(0), np.empty(0))
    return TrainingSet(np.concatenate(zs), np.concatenate(ts))
