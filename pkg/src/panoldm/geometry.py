"""Equirectangular-sphere geometry.

Conventions used throughout the package:

* An ERP image has W == 2*H. Row r covers colatitude, column c longitude;
  pixel centers sit at theta = pi*(r+0.5)/H (0 = north pole / zenith) and
  phi = 2*pi*(c+0.5)/W - pi, phi in [-pi, pi).
* Directions are unit vectors (x, y, z) with x = sin(theta)*cos(phi),
  y = sin(theta)*sin(phi), z = cos(theta); +z is up.
* All resampling is bilinear with circular wrap in longitude and clamp in
  latitude. Fractional pixel coordinates put integers on pixel centers.

The seam-free pad extends an ERP feature map so that convolutions see the
true spherical neighbourhood: columns wrap circularly, and rows continued
past a pole land on the opposite meridian (half-width roll) in mirrored row
order. The mirror includes the boundary row: pad row -(k+1) reads image
row k. This matches the pixel-center pole geometry, where stepping row 0 ->
row -1 crosses the pole onto the antipodal meridian at the same colatitude.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import bilinear_gather, bilinear_scatter_add

TRAIN_FOV_CHOICES = (40.0, 60.0, 90.0, 120.0)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class ErpImage:
    """H x W x C pixel grid tagged with its dynamic range ('ldr' or 'hdr')."""

    pixels: np.ndarray
    dynamic_range: str = "ldr"

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ValueError(f"expected (H, W, C) pixels, got shape {px.shape}")
        h, w, _ = px.shape
        if w != 2 * h:
            raise ValueError(f"ERP images need W == 2*H, got {h}x{w}")
        if not np.all(np.isfinite(px)):
            raise ValueError("ERP pixels must be finite")
        if self.dynamic_range == "ldr":
            if px.min() < 0.0 or px.max() > 1.0:
                raise ValueError("LDR pixels must lie in [0, 1]")
        elif self.dynamic_range == "hdr":
            if px.min() < 0.0:
                raise ValueError("HDR pixels must be non-negative")
        else:
            raise ValueError(f"unknown dynamic range {self.dynamic_range!r}")
        self.pixels = px

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def with_pixels(self, pixels):
        return ErpImage(pixels, self.dynamic_range)


@dataclass(frozen=True)
class SphereDirection:
    """Unit direction on the sphere."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"direction norm {n} is not 1 within 1e-6")

    @classmethod
    def from_angles(cls, theta, phi):
        st = math.sin(theta)
        return cls(st * math.cos(phi), st * math.sin(phi), math.cos(theta))

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=np.float64)
        n = float(np.linalg.norm(v))
        if n == 0.0:
            raise ValueError("zero vector has no direction")
        return cls(*(v / n))

    @property
    def theta(self):
        return math.acos(max(-1.0, min(1.0, self.z)))

    @property
    def phi(self):
        return math.atan2(self.y, self.x)

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def angle_to(self, other):
        d = self.x * other.x + self.y * other.y + self.z * other.z
        return math.acos(max(-1.0, min(1.0, d)))


@dataclass(frozen=True)
class LfovSpec:
    """A limited-field-of-view camera pose: horizontal fov, yaw, pitch."""

    fov_degrees: float
    yaw_degrees: float = 0.0
    pitch_degrees: float = 0.0
    aspect: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.fov_degrees < 180.0:
            raise ValueError(f"fov must be in (0, 180), got {self.fov_degrees}")
        if self.aspect <= 0.0:
            raise ValueError("aspect must be positive")


# ---------------------------------------------------------------------------
# seam-free padding (and helpers for the other conv pad modes)
# ---------------------------------------------------------------------------

def _check_pad_args(h, w, p):
    if p < 0:
        raise ValueError("pad width must be non-negative")
    if w % 2 != 0:
        raise ValueError(f"spherical padding needs even width, got {w}")
    if p > h or p > w // 2:
        raise ValueError(f"pad {p} too large for {h}x{w}")


def _wrap_cols(block, p):
    """Extend (..., W) circularly to (..., W + 2p)."""
    if p == 0:
        return block
    return np.concatenate([block[..., -p:], block, block[..., :p]], axis=-1)


def _unwrap_cols_add(block, p):
    """Adjoint of _wrap_cols: fold the wrapped strips back in."""
    if p == 0:
        return block
    core = block[..., p:-p].copy()
    core[..., -p:] += block[..., :p]
    core[..., :p] += block[..., -p:]
    return core


def erp_pad(img, p):
    """Pad (..., H, W) with the spherical ERP rule.

    Left/right wrap circularly; rows continued past a pole take mirrored
    rows rolled by half the width (the antipodal meridian). Corners follow
    the pole rule applied to the circularly extended rows.
    """
    h, w = img.shape[-2], img.shape[-1]
    _check_pad_args(h, w, p)
    if p == 0:
        return img.copy()
    mid = _wrap_cols(img, p)
    top = _wrap_cols(np.flip(np.roll(img[..., :p, :], -(w // 2), axis=-1), axis=-2), p)
    bottom = _wrap_cols(np.flip(np.roll(img[..., -p:, :], -(w // 2), axis=-1), axis=-2), p)
    return np.concatenate([top, mid, bottom], axis=-2)


def erp_pad_adjoint(grad, p):
    """Adjoint of erp_pad: (..., H+2p, W+2p) -> (..., H, W)."""
    if p == 0:
        return grad.copy()
    w = grad.shape[-1] - 2 * p
    out = _unwrap_cols_add(grad[..., p:-p, :], p)
    top = np.roll(np.flip(_unwrap_cols_add(grad[..., :p, :], p), axis=-2), w // 2, axis=-1)
    bottom = np.roll(np.flip(_unwrap_cols_add(grad[..., -p:, :], p), axis=-2), w // 2, axis=-1)
    out[..., :p, :] += top
    out[..., -p:, :] += bottom
    return out


def erp_pad_source_indices(h, w, p):
    """Source (row, col) image indices for every cell of the padded grid.

    Returns two (H+2p, W+2p) int arrays: the gather map the slice-based
    erp_pad implements.
    """
    _check_pad_args(h, w, p)
    rows = np.arange(-p, h + p)
    cols = np.arange(-p, w + p)
    r_grid, c_grid = np.meshgrid(rows, cols, indexing="ij")
    over_top = r_grid < 0
    over_bottom = r_grid >= h
    src_r = np.where(over_top, -r_grid - 1, np.where(over_bottom, 2 * h - 1 - r_grid, r_grid))
    crossed = over_top | over_bottom
    src_c = np.where(crossed, (c_grid + w // 2) % w, c_grid % w)
    return src_r, src_c


def circular_pad(img, p):
    """Wrap (..., H, W) circularly in both axes."""
    if p == 0:
        return img.copy()
    wide = _wrap_cols(img, p)
    return np.concatenate([wide[..., -p:, :], wide, wide[..., :p, :]], axis=-2)


def circular_pad_adjoint(grad, p):
    if p == 0:
        return grad.copy()
    rows = grad[..., p:-p, :].copy()
    rows[..., -p:, :] += grad[..., :p, :]
    rows[..., :p, :] += grad[..., -p:, :]
    return _unwrap_cols_add(rows, p)


def zero_pad(img, p):
    if p == 0:
        return img.copy()
    pad = [(0, 0)] * (img.ndim - 2) + [(p, p), (p, p)]
    return np.pad(img, pad)


def zero_pad_adjoint(grad, p):
    if p == 0:
        return grad.copy()
    return grad[..., p:-p, p:-p].copy()


# ---------------------------------------------------------------------------
# pixel <-> direction maps
# ---------------------------------------------------------------------------

def _check_erp_shape(h, w):
    if w != 2 * h:
        raise ValueError(f"ERP grid needs W == 2*H, got {h}x{w}")


def pixel_angles(h, w):
    """Pixel-center (theta, phi) grids, each (H, W) float64."""
    _check_erp_shape(h, w)
    theta = np.pi * (np.arange(h, dtype=np.float64) + 0.5) / h
    phi = 2.0 * np.pi * (np.arange(w, dtype=np.float64) + 0.5) / w - np.pi
    return np.broadcast_to(theta[:, None], (h, w)), np.broadcast_to(phi[None, :], (h, w))


def pixel_dir_map(h, w):
    """(H, W, 3) unit direction of every pixel center."""
    theta, phi = pixel_angles(h, w)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def dir_from_pixel(r, c, h, w):
    theta = np.pi * (r + 0.5) / h
    phi = 2.0 * np.pi * (c + 0.5) / w - np.pi
    return SphereDirection.from_angles(theta, phi)


def pixel_from_dir(direction, h, w):
    """Nearest pixel center to a direction (SphereDirection or (..., 3) array)."""
    v = direction.as_array() if isinstance(direction, SphereDirection) else np.asarray(direction)
    theta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
    phi = np.arctan2(v[..., 1], v[..., 0])
    r = np.clip(np.rint(theta * h / np.pi - 0.5).astype(np.int64), 0, h - 1)
    c = np.rint((phi + np.pi) * w / (2.0 * np.pi) - 0.5).astype(np.int64) % w
    if r.ndim == 0:
        return int(r), int(c)
    return r, c


def frac_pixel_from_dir(v, h, w):
    """Fractional (row, col) pixel coordinates for (..., 3) directions."""
    theta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
    phi = np.arctan2(v[..., 1], v[..., 0])
    return theta * h / np.pi - 0.5, (phi + np.pi) * w / (2.0 * np.pi) - 0.5


def solid_angle_weights(h, w):
    """Exact per-pixel solid angle: dphi * (cos(theta_top) - cos(theta_bottom))."""
    _check_erp_shape(h, w)
    edges = np.cos(np.pi * np.arange(h + 1, dtype=np.float64) / h)
    band = (edges[:-1] - edges[1:]) * (2.0 * np.pi / w)
    return np.broadcast_to(band[:, None], (h, w)).copy()


# ---------------------------------------------------------------------------
# rotations and resampling
# ---------------------------------------------------------------------------

def _pixels_of(img):
    return img.pixels if isinstance(img, ErpImage) else np.asarray(img)


def _rewrap(img, pixels, clip_ldr=False):
    if isinstance(img, ErpImage):
        if clip_ldr and img.dynamic_range == "ldr":
            pixels = np.clip(pixels, 0.0, 1.0)
        elif img.dynamic_range == "hdr":
            pixels = np.maximum(pixels, 0.0)
        return img.with_pixels(pixels)
    return pixels


def resample_erp(pixels, rows, cols):
    """Bilinear-sample (H, W, C) pixels at fractional coords (wrap longitude)."""
    sampled = bilinear_gather(np.moveaxis(pixels, -1, 0), rows, cols, wrap_cols=True)
    return np.moveaxis(sampled, 0, -1)


def rotate_yaw(img, degrees):
    """Rotate the panorama about the vertical axis.

    A feature at longitude phi moves to phi - radians(degrees); integral
    pixel shifts are exact column rolls.
    """
    px = _pixels_of(img)
    h, w = px.shape[:2]
    shift = degrees * w / 360.0
    if abs(shift - round(shift)) < 1e-9:
        out = np.roll(px, -int(round(shift)) % w, axis=1)
        return _rewrap(img, out)
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64) + shift, indexing="ij")
    return _rewrap(img, resample_erp(px, rr, cc), clip_ldr=True)


def flip_horizontal(img):
    """Mirror longitude (phi -> -phi)."""
    px = _pixels_of(img)
    return _rewrap(img, px[:, ::-1].copy())


PITCH_ROT = np.array([[0.0, 0.0, 1.0],
                      [0.0, 1.0, 0.0],
                      [-1.0, 0.0, 0.0]])  # north pole -> equator (about +y)


def pitch_warp_coords(h, w):
    """Fractional source coords implementing the 90-degree pitch warp."""
    dirs = pixel_dir_map(h, w)
    src = dirs @ PITCH_ROT  # rows transform by R^{-1} = R^T
    return frac_pixel_from_dir(src, h, w)


def pitch_rotate_90(img):
    """Resample under the sphere rotation taking the north pole to the equator."""
    px = _pixels_of(img)
    rows, cols = pitch_warp_coords(px.shape[0], px.shape[1])
    return _rewrap(img, resample_erp(px, rows, cols), clip_ldr=True)


# ---------------------------------------------------------------------------
# cubemap projection
# ---------------------------------------------------------------------------

# face order: +X, -X, +Y, -Y, +Z (top), -Z (bottom)
_FACE_AXES = (
    ((1, 0, 0), (0, 1, 0), (0, 0, -1)),
    ((-1, 0, 0), (0, -1, 0), (0, 0, -1)),
    ((0, 1, 0), (-1, 0, 0), (0, 0, -1)),
    ((0, -1, 0), (1, 0, 0), (0, 0, -1)),
    ((0, 0, 1), (0, 1, 0), (1, 0, 0)),
    ((0, 0, -1), (0, 1, 0), (-1, 0, 0)),
)
CUBE_FACE_NAMES = ("posx", "negx", "posy", "negy", "top", "bottom")


def cube_face_dirs(face, size):
    """(S, S, 3) pixel-center ray directions for one cube face."""
    if not 0 <= face < 6:
        raise ValueError(f"face index must be 0..5, got {face}")
    center, right, down = (np.array(a, dtype=np.float64) for a in _FACE_AXES[face])
    t = (np.arange(size, dtype=np.float64) + 0.5) / size * 2.0 - 1.0
    v, u = np.meshgrid(t, t, indexing="ij")
    d = center + u[:, :, None] * right + v[:, :, None] * down
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def erp_to_cube(img, face, size):
    """Extract one cube face (S, S, C) from an ERP image."""
    if size < 8:
        raise ValueError("face size must be at least 8")
    px = _pixels_of(img)
    rows, cols = frac_pixel_from_dir(cube_face_dirs(face, size), px.shape[0], px.shape[1])
    return resample_erp(px, rows, cols)


def cube_to_erp(faces, h):
    """Assemble an ERP (H, 2H, C) from six faces ordered as CUBE_FACE_NAMES."""
    if len(faces) != 6:
        raise ValueError("need six cube faces")
    faces = [np.asarray(f) for f in faces]
    size = faces[0].shape[0]
    w = 2 * h
    dirs = pixel_dir_map(h, w)
    ax, ay, az = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    abs_d = np.abs(dirs)
    major = np.argmax(abs_d, axis=-1)
    face_idx = np.select(
        [major == 0, major == 1],
        [np.where(ax >= 0, 0, 1), np.where(ay >= 0, 2, 3)],
        default=np.where(az >= 0, 4, 5),
    )
    out = np.zeros((h, w, faces[0].shape[2]), dtype=faces[0].dtype)
    for f in range(6):
        sel = face_idx == f
        if not np.any(sel):
            continue
        center, right, down = (np.array(a, dtype=np.float64) for a in _FACE_AXES[f])
        d = dirs[sel]
        t = d @ center
        u = (d @ right) / t
        v = (d @ down) / t
        cc = (np.clip(u, -1.0, 1.0) + 1.0) * 0.5 * size - 0.5
        rr = (np.clip(v, -1.0, 1.0) + 1.0) * 0.5 * size - 0.5
        sampled = bilinear_gather(np.moveaxis(faces[f], -1, 0),
                                  rr[None, :], cc[None, :], wrap_cols=False)
        out[sel] = np.moveaxis(sampled[:, 0, :], 0, -1)
    return out


# ---------------------------------------------------------------------------
# perspective crops and field-of-view masks
# ---------------------------------------------------------------------------

def camera_basis(spec):
    """Forward/right/up unit vectors for an LfovSpec pose."""
    yaw = math.radians(spec.yaw_degrees)
    pitch = math.radians(spec.pitch_degrees)
    forward = np.array([math.cos(pitch) * math.cos(yaw),
                        math.cos(pitch) * math.sin(yaw),
                        math.sin(pitch)])
    up_world = np.array([0.0, 0.0, 1.0])
    right = np.cross(up_world, forward)
    n = np.linalg.norm(right)
    if n < 1e-9:
        right = np.array([0.0, 1.0, 0.0])
    else:
        right = right / n
    cam_up = np.cross(forward, right)
    cam_up = cam_up / np.linalg.norm(cam_up)
    return forward, right, cam_up


def perspective_crop_and_mask(img, spec, out_h, out_w):
    """Gnomonic crop plus the binary ERP frustum mask and the masked panorama.

    Returns (perspective (out_h, out_w, C), mask (H, W) in {0, 1}, masked ErpImage).
    """
    erp = img if isinstance(img, ErpImage) else ErpImage(np.asarray(img), "ldr")
    px = erp.pixels
    h, w = px.shape[:2]
    forward, right, cam_up = camera_basis(spec)
    tan_w = math.tan(math.radians(spec.fov_degrees) / 2.0)
    tan_h = tan_w / spec.aspect

    u = ((np.arange(out_w, dtype=np.float64) + 0.5) / out_w * 2.0 - 1.0) * tan_w
    v = (1.0 - (np.arange(out_h, dtype=np.float64) + 0.5) / out_h * 2.0) * tan_h
    vv, uu = np.meshgrid(v, u, indexing="ij")
    rays = forward + uu[:, :, None] * right + vv[:, :, None] * cam_up
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    rows, cols = frac_pixel_from_dir(rays, h, w)
    persp = resample_erp(px, rows, cols)

    dirs = pixel_dir_map(h, w)
    t = dirs @ forward
    inside = (t > 0.0) \
        & (np.abs(dirs @ right) <= t * tan_w) \
        & (np.abs(dirs @ cam_up) <= t * tan_h)
    mask = inside.astype(px.dtype)
    masked = erp.with_pixels(px * mask[:, :, None])
    return persp, mask, masked


# ---------------------------------------------------------------------------
# seam diagnostic
# ---------------------------------------------------------------------------

def seam_metric(img):
    """Border-column discontinuity normalized by the interior baseline.

    0 for perfectly wrap-continuous content; approximately 1 when the seam
    looks like any other column transition.
    """
    px = _pixels_of(img).astype(np.float64)
    w = px.shape[1]
    if w < 4:
        raise ValueError("seam metric needs at least 4 columns")
    border = np.mean(np.abs(px[:, 0] - px[:, -1]))
    interior = np.mean(np.abs(np.diff(px, axis=1)))
    return float(border / max(1e-8, interior))
