"""Scene files: a UTF-8 JSON manifest plus a little-endian float32 blob.

Manifest layout (``version`` 1)::

    {
      "format": "nocturne-scene",
      "version": 1,
      "blob": "<file name of the blob, relative to the manifest>",
      "dtype": "<f4",
      "timeline": [t0, t1, ...],
      "cameras": [{"fx", "fy", "cx", "cy", "width", "height",
                   "camera_id", "timestep", "rotation": [w,x,y,z], "translation": [x,y,z]}],
      "background": {"count": N, "arrays": {name: {"offset": bytes, "shape": [...]}}},
      "actors": [{"id", "count", "arrays", "trajectory": [{"t", "rotation", "translation"}],
                  "bbox_min", "bbox_max"}],
      "sky": {"face_resolution": R, "encoding": "log", "offset": bytes, "shape": [6, R, R, 3]},
      "illum": null | {"camera_ids": [...], "n_layers": L, "arrays": {name: {"offset", "shape"}}}
    }

Every per-Gaussian array listed in ``scene.PARAM_SHAPES`` must be present.
Sky texels are stored as natural logs (HDR value = exp). Camera and trajectory values are JSON numbers (exact for float64); everything
in the blob is float32.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import SceneFormatError, VersionMismatchError
from .geom import Se3Pose
from .illumination import GlobalIllumNet
from .imageio import read_pfm, read_png, write_pfm, write_png
from .optim import Frame
from .scene import PARAM_SHAPES, Camera, CubeMap, GaussianParams, RigidActor, SceneGraph

FORMAT = "nocturne-scene"
VERSION = 1
DTYPE = "<f4"


class _BlobWriter:
    def __init__(self):
        self.chunks = []
        self.offset = 0

    def add(self, arr) -> dict:
        data = np.ascontiguousarray(np.asarray(arr, dtype=DTYPE))
        entry = {"offset": self.offset, "shape": list(data.shape)}
        self.chunks.append(data.tobytes())
        self.offset += data.nbytes
        return entry


def _pose_json(pose: Se3Pose) -> dict:
    return {"rotation": [float(v) for v in pose.rotation], "translation": [float(v) for v in pose.translation]}


def save_scene(scene: SceneGraph, path) -> None:
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    w = _BlobWriter()

    def gaussians(g: GaussianParams) -> dict:
        return {"count": len(g), "arrays": {k: w.add(v) for k, v in g.arrays().items()}}

    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "blob": blob_path.name,
        "dtype": DTYPE,
        "timeline": [float(t) for t in scene.timeline],
        "cameras": [
            {
                "fx": float(c.fx), "fy": float(c.fy), "cx": float(c.cx), "cy": float(c.cy),
                "width": int(c.width), "height": int(c.height),
                "camera_id": int(c.camera_id), "timestep": float(c.timestep),
                **_pose_json(c.pose),
            }
            for c in scene.cameras
        ],
        "background": gaussians(scene.background),
        "actors": [],
        "sky": {"face_resolution": scene.sky.face_resolution, "encoding": "log", **w.add(scene.sky.log_texels)},
        "illum": None,
    }
    for a in scene.actors:
        entry = {"id": a.id, **gaussians(a.gaussians)}
        entry["trajectory"] = [{"t": float(t), **_pose_json(p)} for t, p in a.trajectory.items()]
        entry["bbox_min"] = [float(v) for v in a.bbox_min]
        entry["bbox_max"] = [float(v) for v in a.bbox_max]
        manifest["actors"].append(entry)
    if scene.illum is not None:
        manifest["illum"] = {
            "camera_ids": list(scene.illum.camera_ids),
            "n_layers": scene.illum.n_layers,
            "arrays": {k: w.add(v) for k, v in scene.illum.params.items()},
        }
    blob_path.write_bytes(b"".join(w.chunks))
    path.write_text(json.dumps(manifest, indent=1, allow_nan=True) + "\n", encoding="utf-8")


def _get(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SceneFormatError(f"{where}: missing field {key!r}")
    return obj[key]


def _read_array(blob: bytes, entry, where, expect_shape=None) -> np.ndarray:
    offset = _get(entry, "offset", where)
    shape = tuple(_get(entry, "shape", where))
    if expect_shape is not None and shape != tuple(expect_shape):
        raise SceneFormatError(f"{where}: shape {shape} != expected {tuple(expect_shape)}")
    count = int(np.prod(shape, dtype=np.int64))
    if offset < 0 or offset + 4 * count > len(blob):
        raise SceneFormatError(f"{where}: array extends past end of blob")
    return np.frombuffer(blob, dtype=DTYPE, count=count, offset=offset).reshape(shape).astype(np.float64)


def _read_gaussians(blob, entry, where) -> GaussianParams:
    n = int(_get(entry, "count", where))
    arrays = _get(entry, "arrays", where)
    values = {
        name: _read_array(blob, _get(arrays, name, f"{where}.arrays"), f"{where}.arrays.{name}", (n,) + shape)
        for name, shape in PARAM_SHAPES.items()
    }
    return GaussianParams(**values)


def _read_pose(entry, where) -> Se3Pose:
    return Se3Pose(np.array(_get(entry, "rotation", where), dtype=float),
                   np.array(_get(entry, "translation", where), dtype=float))


def load_scene(path) -> SceneGraph:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if _get(manifest, "format", "manifest") != FORMAT:
        raise SceneFormatError(f"{path}: not a {FORMAT} manifest")
    version = _get(manifest, "version", "manifest")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: scene version {version}, reader supports {VERSION}")
    if _get(manifest, "dtype", "manifest") != DTYPE:
        raise SceneFormatError(f"{path}: unsupported dtype {manifest['dtype']!r}")
    blob = (path.parent / _get(manifest, "blob", "manifest")).read_bytes()

    cameras = []
    for i, c in enumerate(_get(manifest, "cameras", "manifest")):
        where = f"cameras[{i}]"
        cameras.append(
            Camera(
                fx=float(_get(c, "fx", where)), fy=float(_get(c, "fy", where)),
                cx=float(_get(c, "cx", where)), cy=float(_get(c, "cy", where)),
                width=int(_get(c, "width", where)), height=int(_get(c, "height", where)),
                pose=_read_pose(c, where),
                camera_id=int(_get(c, "camera_id", where)),
                timestep=float(_get(c, "timestep", where)),
            )
        )
    if not cameras:
        raise SceneFormatError(f"{path}: scene needs at least one camera")

    background = _read_gaussians(blob, _get(manifest, "background", "manifest"), "background")
    actors = []
    for i, a in enumerate(_get(manifest, "actors", "manifest")):
        where = f"actors[{i}]"
        traj = {float(_get(p, "t", f"{where}.trajectory")): _read_pose(p, f"{where}.trajectory")
                for p in _get(a, "trajectory", where)}
        actors.append(
            RigidActor(
                id=str(_get(a, "id", where)),
                gaussians=_read_gaussians(blob, a, where),
                trajectory=traj,
                bbox_min=np.array(a.get("bbox_min", [-np.inf] * 3), dtype=float),
                bbox_max=np.array(a.get("bbox_max", [np.inf] * 3), dtype=float),
            )
        )
    sky_entry = _get(manifest, "sky", "manifest")
    R = int(_get(sky_entry, "face_resolution", "sky"))
    if sky_entry.get("encoding", "log") != "log":
        raise SceneFormatError(f"sky: unsupported texel encoding {sky_entry['encoding']!r}")
    sky = CubeMap(_read_array(blob, sky_entry, "sky", (6, R, R, 3)))

    illum = None
    ie = manifest.get("illum")
    if ie is not None:
        arrays = _get(ie, "arrays", "illum")
        net = GlobalIllumNet(_get(ie, "camera_ids", "illum"), n_layers=int(_get(ie, "n_layers", "illum")))
        for name, ref in net.params.items():
            net.params[name] = _read_array(blob, _get(arrays, name, "illum.arrays"), f"illum.arrays.{name}",
                                           ref.shape)
        illum = net

    return SceneGraph(background, actors, sky, np.array(_get(manifest, "timeline", "manifest"), dtype=float),
                      cameras, illum)


# ------------------------------------------------------------------ frame sets
#
# A frame directory holds ``frames.json`` plus one image and one normal prior per
# frame::
#
#     {"format": "nocturne-frames", "version": 1,
#      "frames": [{"camera": index into scene.cameras, "image": "image_0000.png",
#                  "prior": "prior_0000.pfm"}]}
#
# Images are PNG (8-bit) or PFM (float); priors are 3-channel PFM camera-frame
# normals with zero rows marking pixels without a prior.

FRAMES_FORMAT = "nocturne-frames"
FRAMES_INDEX = "frames.json"


def _read_image(path: Path) -> np.ndarray:
    img = read_pfm(path) if path.suffix.lower() == ".pfm" else read_png(path)
    return np.asarray(img, dtype=np.float64)


def save_frames(frames, directory, image_format: str = "png") -> None:
    if image_format not in ("png", "pfm"):
        raise ValueError(f"unknown image format {image_format!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, f in enumerate(frames):
        image = f"image_{i:04d}.{image_format}"
        (write_png if image_format == "png" else write_pfm)(directory / image, f.image)
        entry = {"camera": i, "image": image}
        if f.prior is not None:
            entry["prior"] = f"prior_{i:04d}.pfm"
            write_pfm(directory / entry["prior"], f.prior)
        entries.append(entry)
    index = {"format": FRAMES_FORMAT, "version": VERSION, "frames": entries}
    (directory / FRAMES_INDEX).write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")


def load_frames(directory, scene: SceneGraph | None = None) -> list:
    """Frames of a frame directory; cameras are taken from ``scene`` when given."""
    directory = Path(directory)
    index_path = directory / FRAMES_INDEX
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{index_path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if _get(index, "format", "frames index") != FRAMES_FORMAT:
        raise SceneFormatError(f"{index_path}: not a {FRAMES_FORMAT} index")
    frames = []
    for i, e in enumerate(_get(index, "frames", "frames index")):
        where = f"frames[{i}]"
        cam_idx = int(_get(e, "camera", where))
        cam = None
        if scene is not None:
            if not 0 <= cam_idx < len(scene.cameras):
                raise SceneFormatError(f"{where}: camera {cam_idx} not in scene ({len(scene.cameras)} cameras)")
            cam = scene.cameras[cam_idx]
        image = _read_image(directory / _get(e, "image", where))
        prior = np.asarray(read_pfm(directory / e["prior"]), dtype=np.float64) if "prior" in e else None
        if cam is not None and image.shape[:2] != (cam.height, cam.width):
            raise SceneFormatError(f"{where}: image is {image.shape[1]}x{image.shape[0]}, "
                                   f"camera is {cam.width}x{cam.height}")
        frames.append(Frame(cam, image, prior))
    return frames

