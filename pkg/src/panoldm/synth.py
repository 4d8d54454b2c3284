"""Procedural HDR environment maps with ground-truth light-direction metadata.

Two scene families at toy fidelity: "outdoor" (analytic sky gradient, sun
disc, optional floating occluder boxes, Lambertian-ish ground) and "indoor"
(box room with a bright ceiling patch whose direction plays the sun role).
Every pixel is a pure function of the ray direction and the scene
parameters, so panoramas are seam-free and bit-reproducible by
construction. The pixel nearest the light direction is pinned to exactly
``sun_intensity`` (when unoccluded), making the brightest-pixel ground
truth unambiguous.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .formats import read_meta, read_png, write_meta, write_pfm, write_png
from .geometry import ErpImage, SphereDirection, flip_horizontal, rotate_yaw
from .tensor import Rng

ROTATION_CHOICES = (60.0, 105.0, 150.0, 195.0, 240.0, 285.0)
FLIP_PROBABILITY = 0.2
COPIES_PER_SCENE = 4


@dataclass
class BoxSpec:
    center: np.ndarray
    half: np.ndarray
    color: np.ndarray


@dataclass
class SceneParams:
    kind: str  # 'outdoor' | 'indoor'
    sun_direction: SphereDirection
    sun_intensity: float
    sun_angular_radius: float  # degrees
    sky_horizon_color: np.ndarray
    sky_zenith_color: np.ndarray
    ground_albedo: np.ndarray
    n_boxes: int
    boxes: list = field(default_factory=list)
    cloudiness: float = 0.0
    detail_seed: int = 0
    room_half: np.ndarray = None
    light_half_size: float = 0.6

    def __post_init__(self):
        if self.sun_intensity <= 1.0:
            raise ValueError("sun intensity must exceed the LDR range")
        if self.kind == "outdoor" and self.sun_direction.z <= 0.0:
            raise ValueError("outdoor sun must sit above the horizon")
        if not 0.0 <= self.cloudiness <= 1.0:
            raise ValueError("cloudiness must be in [0, 1]")


def random_scene_params(rng, kind=None):
    if kind is None:
        kind = "outdoor" if rng.uniform() < 0.5 else "indoor"
    if kind == "outdoor":
        theta = math.radians(rng.uniform(15.0, 75.0))  # keep the sun above horizon
        phi = rng.uniform(-math.pi, math.pi)
        sun = SphereDirection.from_angles(theta, phi)
        horizon = np.array([rng.uniform(0.5, 0.9), rng.uniform(0.4, 0.8), rng.uniform(0.5, 0.95)])
        zenith = np.array([rng.uniform(0.05, 0.3), rng.uniform(0.15, 0.5), rng.uniform(0.5, 0.95)])
        ground = np.array([rng.uniform(0.1, 0.5), rng.uniform(0.15, 0.5), rng.uniform(0.05, 0.3)])
        n_boxes = int(rng.integers(0, 4))
        boxes = []
        for _ in range(n_boxes):
            az = rng.uniform(-math.pi, math.pi)
            el = rng.uniform(-0.15, 0.6)
            dist = rng.uniform(4.0, 9.0)
            center = dist * np.array([math.cos(el) * math.cos(az),
                                      math.cos(el) * math.sin(az), math.sin(el)])
            half = np.array([rng.uniform(0.5, 1.6) for _ in range(3)])
            color = np.array([rng.uniform(0.15, 0.8) for _ in range(3)])
            boxes.append(BoxSpec(center, half, color))
        return SceneParams(
            kind="outdoor",
            sun_direction=sun,
            sun_intensity=float(rng.uniform(80.0, 600.0)),
            sun_angular_radius=float(rng.uniform(3.0, 7.0)),
            sky_horizon_color=horizon,
            sky_zenith_color=zenith,
            ground_albedo=ground,
            n_boxes=n_boxes,
            boxes=boxes,
            cloudiness=float(rng.uniform(0.0, 0.8)),
            detail_seed=int(rng.integers(0, 2 ** 31)),
        )
    room = np.array([rng.uniform(2.5, 4.5), rng.uniform(3.0, 5.5), rng.uniform(2.0, 3.0)])
    light_xy = np.array([rng.uniform(-0.4, 0.4) * room[0], rng.uniform(-0.4, 0.4) * room[1]])
    light_pos = np.array([light_xy[0], light_xy[1], room[2]])
    sun = SphereDirection.from_vector(light_pos)
    return SceneParams(
        kind="indoor",
        sun_direction=sun,
        sun_intensity=float(rng.uniform(30.0, 200.0)),
        sun_angular_radius=float(rng.uniform(4.0, 9.0)),
        sky_horizon_color=np.array([rng.uniform(0.4, 0.9) for _ in range(3)]),
        sky_zenith_color=np.array([rng.uniform(0.5, 0.95) for _ in range(3)]),
        ground_albedo=np.array([rng.uniform(0.15, 0.6) for _ in range(3)]),
        n_boxes=0,
        boxes=[],
        cloudiness=0.0,
        detail_seed=int(rng.integers(0, 2 ** 31)),
        room_half=room,
        light_half_size=float(rng.uniform(0.35, 0.8)),
    )


def _ray_box_hits(dirs, box):
    """First-hit parameter and entry-face normals for rays from the origin.

    Returns (t, normal, hit) arrays; t is +inf where the box is missed.
    """
    d = dirs
    safe = np.where(np.abs(d) < 1e-12, 1e-12, d)
    lo = (box.center - box.half) / safe
    hi = (box.center + box.half) / safe
    t1 = np.minimum(lo, hi)
    t2 = np.maximum(lo, hi)
    tmin = t1.max(axis=-1)
    tmax = t2.min(axis=-1)
    hit = (tmax >= tmin) & (tmin > 1e-6)
    axis = np.argmax(t1, axis=-1)
    normal = np.zeros_like(d)
    idx = np.arange(d.shape[0])
    normal[idx, axis] = -np.sign(d[idx, axis])
    t = np.where(hit, tmin, np.inf)
    return t, normal, hit


def _outdoor_radiance(params, dirs):
    n = dirs.shape[0]
    sun = params.sun_direction.as_array()
    z = dirs[:, 2]
    lift = np.clip(z, 0.0, 1.0) ** 0.6
    sky = (params.sky_horizon_color[None, :] * (1.0 - lift[:, None])
           + params.sky_zenith_color[None, :] * lift[:, None])
    sun_z = max(0.0, sun[2])
    ground = params.ground_albedo[None, :] * (0.2 + 0.8 * sun_z) * (1.0 + 0.25 * z[:, None])
    out = np.where(z[:, None] >= 0.0, sky, np.maximum(ground, 0.0))

    if params.cloudiness > 0.0:
        detail = np.random.default_rng(params.detail_seed)
        for _ in range(3):
            az = detail.uniform(-math.pi, math.pi)
            el = detail.uniform(0.1, 1.2)
            u = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
            power = detail.uniform(4.0, 18.0)
            amp = detail.uniform(0.3, 0.9) * params.cloudiness
            lobe = np.clip(dirs @ u, 0.0, None) ** power
            out = out + amp * lobe[:, None] * np.array([0.95, 0.95, 1.0])[None, :]

    cos_r = math.cos(math.radians(params.sun_angular_radius))
    cos_ang = dirs @ sun
    disc = np.clip((cos_ang - cos_r) / (1.0 - cos_r), 0.0, 1.0) ** 2
    disc_scale = params.sun_intensity * (1.0 - 0.6 * params.cloudiness)
    out = out + disc[:, None] * disc_scale * np.array([1.0, 0.97, 0.92])[None, :]

    best_t = np.full(n, np.inf)
    for box in params.boxes:
        t, normal, hit = _ray_box_hits(dirs, box)
        shade = 0.35 + 0.65 * np.clip(normal @ sun, 0.0, 1.0)
        box_rgb = box.color[None, :] * shade[:, None]
        nearer = hit & (t < best_t)
        # boxes are opaque: nearest hit wins; sky/sun behind them disappears
        out = np.where(nearer[:, None], box_rgb, out)
        best_t = np.where(nearer, t, best_t)
    return out, np.isfinite(best_t)


def _indoor_radiance(params, dirs):
    n = dirs.shape[0]
    half = params.room_half
    safe = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t_exit = np.minimum.reduce([np.where(safe[:, i] > 0, half[i] / safe[:, i],
                                         -half[i] / safe[:, i]) for i in range(3)])
    hit_point = dirs * t_exit[:, None]
    face_axis = np.argmin(np.abs(np.abs(hit_point) - half[None, :]), axis=-1)
    face_sign = np.sign(hit_point[np.arange(n), face_axis])

    detail = np.random.default_rng(params.detail_seed)
    wall_colors = np.stack([
        params.sky_horizon_color * detail.uniform(0.7, 1.0),
        params.sky_horizon_color * detail.uniform(0.7, 1.0),
        params.sky_horizon_color * detail.uniform(0.7, 1.0),
        params.sky_horizon_color * detail.uniform(0.7, 1.0),
        params.sky_zenith_color,           # ceiling
        params.ground_albedo,              # floor
    ])
    face_index = np.where(face_axis == 2, np.where(face_sign > 0, 4, 5),
                          face_axis * 2 + (face_sign < 0))
    base = wall_colors[face_index]

    light_dir = params.sun_direction.as_array()
    glow = np.clip(dirs @ light_dir, 0.0, 1.0)
    out = base * (0.35 + 0.65 * glow[:, None] ** 2)

    light_pos = light_dir / max(light_dir[2], 1e-9) * half[2]
    on_ceiling = (face_axis == 2) & (face_sign > 0)
    in_patch = (np.abs(hit_point[:, 0] - light_pos[0]) < params.light_half_size) \
        & (np.abs(hit_point[:, 1] - light_pos[1]) < params.light_half_size) & on_ceiling
    # slightly below peak so the pinned pixel at the light centre is the unique max
    out = np.where(in_patch[:, None], 0.97 * params.sun_intensity * np.ones(3)[None, :], out)
    return out, ~in_patch


def synth_panorama(params, h, w):
    """Render a scene to an (H, W) HDR panorama plus its metadata dict."""
    if w != 2 * h:
        raise ValueError("panoramas need W == 2*H")
    dirs = geometry.pixel_dir_map(h, w).reshape(-1, 3)
    if params.kind == "outdoor":
        radiance, occluded = _outdoor_radiance(params, dirs)
    elif params.kind == "indoor":
        radiance, occluded = _indoor_radiance(params, dirs)
    else:
        raise ValueError(f"unknown scene kind {params.kind!r}")
    radiance = radiance.reshape(h, w, 3)

    # pin the pixel containing the light so the HDR peak is exact
    sr, sc = geometry.pixel_from_dir(params.sun_direction, h, w)
    if params.kind == "outdoor":
        sun_blocked = bool(occluded.reshape(h, w)[sr, sc])
    else:
        sun_blocked = False
    if not sun_blocked:
        radiance[sr, sc] = params.sun_intensity

    img = ErpImage(np.ascontiguousarray(radiance, dtype=np.float32), "hdr")
    sun = params.sun_direction
    meta = {
        "kind": params.kind,
        "sun_x": repr(sun.x), "sun_y": repr(sun.y), "sun_z": repr(sun.z),
        "sun_theta_deg": repr(math.degrees(sun.theta)),
        "sun_phi_deg": repr(math.degrees(sun.phi)),
        "sun_intensity": repr(params.sun_intensity),
        "sun_angular_radius_deg": repr(params.sun_angular_radius),
        "cloudiness": repr(params.cloudiness),
        "n_boxes": str(params.n_boxes),
        "sun_occluded": str(sun_blocked),
    }
    return img, meta


def tonemap_ldr(hdr):
    """Map HDR to display LDR: Reinhard x/(1+x) then gamma 1/2.2, clipped."""
    px = hdr.pixels if isinstance(hdr, ErpImage) else np.asarray(hdr)
    px = np.clip(px, 0.0, None)
    y = np.clip((px / (1.0 + px)) ** (1.0 / 2.2), 0.0, 1.0).astype(np.float32)
    return ErpImage(y, "ldr")


def _transform_sun(sun, rotation_deg, flipped):
    a = math.radians(rotation_deg)
    x = math.cos(a) * sun.x + math.sin(a) * sun.y
    y = -math.sin(a) * sun.x + math.cos(a) * sun.y
    if flipped:
        y = -y
    return SphereDirection.from_vector(np.array([x, y, sun.z]))


@dataclass
class DatasetRecord:
    scene_id: int
    aug_id: int
    split: str
    kind: str
    hdr_path: str
    ldr_path: str
    meta_path: str
    rotation: float
    flipped: bool


def build_dataset(n_scenes, h, w, seed, out_dir):
    """Synthesize, augment, split, and write a dataset; returns the records.

    Each base scene yields four yaw-rotated copies (distinct angles from the
    45-degree grid in [60, 285]) with a 20% horizontal-flip chance. The
    train/test split (99:1) is by base scene so no augmented sibling leaks
    across the boundary.
    """
    if n_scenes < 10:
        raise ValueError("need at least 10 scenes")
    rng = Rng(seed)
    n_train = min(n_scenes - 1, int(round(n_scenes * 0.99)))
    scene_ids = list(range(n_scenes))
    rng.shuffle(scene_ids)
    train_scenes = set(scene_ids[:n_train])

    for split in ("train", "test"):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)

    records = []
    for scene in range(n_scenes):
        scene_rng = rng.split()
        params = random_scene_params(scene_rng, kind="outdoor" if scene % 2 == 0 else "indoor")
        pano, meta = synth_panorama(params, h, w)
        split = "train" if scene in train_scenes else "test"
        angles = [float(a) for a in scene_rng.choice(ROTATION_CHOICES, size=COPIES_PER_SCENE,
                                                     replace=False)]
        for aug, angle in enumerate(angles):
            flipped = bool(scene_rng.uniform() < FLIP_PROBABILITY)
            img = rotate_yaw(pano, angle)
            if flipped:
                img = flip_horizontal(img)
            ldr = tonemap_ldr(img)
            stem = f"scene{scene:04d}_{aug}"
            hdr_path = os.path.join(split, f"{stem}.hdr.pfm")
            ldr_path = os.path.join(split, f"{stem}.ldr.png")
            meta_path = os.path.join(split, f"{stem}.meta.txt")
            write_pfm(os.path.join(out_dir, hdr_path), img.pixels)
            write_png(os.path.join(out_dir, ldr_path), ldr.pixels)
            sun = _transform_sun(params.sun_direction, angle, flipped)
            aug_meta = dict(meta)
            aug_meta.update({
                "sun_x": repr(sun.x), "sun_y": repr(sun.y), "sun_z": repr(sun.z),
                "rotation_deg": repr(angle),
                "flipped": str(flipped),
                "scene_id": str(scene),
                "aug_id": str(aug),
                "split": split,
            })
            write_meta(os.path.join(out_dir, meta_path), aug_meta)
            records.append(DatasetRecord(scene, aug, split, params.kind,
                                         hdr_path, ldr_path, meta_path, angle, flipped))

    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8") as f:
        f.write("scene_id\taug_id\tsplit\tkind\thdr\tldr\tmeta\trotation\tflipped\n")
        for r in records:
            f.write(f"{r.scene_id}\t{r.aug_id}\t{r.split}\t{r.kind}\t{r.hdr_path}"
                    f"\t{r.ldr_path}\t{r.meta_path}\t{r.rotation}\t{r.flipped}\n")
    return records


def read_manifest(dataset_dir):
    path = os.path.join(dataset_dir, "manifest.tsv")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if not header.startswith("scene_id"):
            raise ValueError(f"{path}: unexpected manifest header")
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 9:
                raise ValueError(f"{path}: malformed manifest row {line!r}")
            records.append(DatasetRecord(int(parts[0]), int(parts[1]), parts[2], parts[3],
                                         parts[4], parts[5], parts[6],
                                         float(parts[7]), parts[8] == "True"))
    return records


def load_hdr(dataset_dir, record):
    from .formats import read_pfm

    return ErpImage(read_pfm(os.path.join(dataset_dir, record.hdr_path)), "hdr")


def load_ldr(dataset_dir, record):
    return ErpImage(read_png(os.path.join(dataset_dir, record.ldr_path)), "ldr")


def load_sun_direction(dataset_dir, record):
    meta = read_meta(os.path.join(dataset_dir, record.meta_path))
    return SphereDirection.from_vector(np.array([float(meta["sun_x"]),
                                                 float(meta["sun_y"]),
                                                 float(meta["sun_z"])]))
