"""File formats: PFM images, 8-bit PNG, the checkpoint container, run configs.

The checkpoint layout (little-endian throughout):

    magic   4 bytes  b"EMLC"
    version u32      currently 1
    count   u32      number of arrays
    per array:
        name  u16 length + UTF-8 bytes
        rank  u8
        dims  u64 per axis
        data  float32 payload, prod(dims) values
    config  u32 length + UTF-8 key=value lines

Round trips are bit-exact by construction; tests enforce it.
"""

import dataclasses
import io
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

CHECKPOINT_MAGIC = b"EMLC"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------

def write_pfm(path, pixels):
    """Write (H, W, 3) or (H, W, 1)/(H, W) float32 data as PFM (rows bottom-up)."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"PFM needs 1 or 3 channels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite values to PFM")
    h, w, c = arr.shape
    tag = b"PF" if c == 3 else b"Pf"
    payload = np.flipud(arr)
    if payload.dtype.byteorder == ">":
        payload = payload.astype("<f4")
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def read_pfm(path):
    """Read a PFM file into (H, W, C) float32 (C in {1, 3})."""
    with open(path, "rb") as f:
        tag = f.readline().strip()
        if tag == b"PF":
            channels = 3
        elif tag == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file (header {tag!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    return np.flipud(data.reshape(h, w, channels)).copy()


# ---------------------------------------------------------------------------
# PNG (8-bit, for LDR images and visualizations)
# ---------------------------------------------------------------------------

def write_png(path, pixels):
    """Write float pixels in [0, 1] as 8-bit PNG (1 or 3 channels)."""
    arr = np.asarray(pixels)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite values to PNG")
    quant = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if quant.shape[2] == 1:
        Image.fromarray(quant[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(quant, mode="RGB").save(path)


def read_png(path):
    """Read an 8-bit PNG into (H, W, C) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

@dataclass
class ModelCheckpoint:
    """Ordered named float32 arrays plus key=value config metadata."""

    arrays: dict
    config: dict = field(default_factory=dict)

    def save(self, path):
        names = list(self.arrays.keys())
        if len(set(names)) != len(names):
            raise ValueError("duplicate array names in checkpoint")
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(self.arrays[name], dtype="<f4")
            encoded = name.encode("utf-8")
            buf.write(struct.pack("<H", len(encoded)))
            buf.write(encoded)
            buf.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                buf.write(struct.pack("<Q", d))
            buf.write(arr.tobytes())
        cfg_text = "".join(f"{k}={v}\n" for k, v in self.config.items()).encode("utf-8")
        buf.write(struct.pack("<I", len(cfg_text)))
        buf.write(cfg_text)
        with open(path, "wb") as f:
            f.write(buf.getvalue())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            data = f.read()
        view = memoryview(data)
        if data[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
        version, count = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        offset = 12
        arrays = {}
        try:
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", data, offset)
                offset += 2
                name = bytes(view[offset:offset + name_len]).decode("utf-8")
                offset += name_len
                (rank,) = struct.unpack_from("<B", data, offset)
                offset += 1
                dims = struct.unpack_from(f"<{rank}Q", data, offset)
                offset += 8 * rank
                n = int(np.prod(dims)) if rank else 1
                end = offset + 4 * n
                if end > len(data):
                    raise ValueError(f"{path}: truncated payload for array {name!r}")
                if name in arrays:
                    raise ValueError(f"{path}: duplicate array name {name!r}")
                arrays[name] = np.frombuffer(view[offset:end], dtype="<f4").reshape(dims).copy()
                offset = end
            (cfg_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            cfg_text = bytes(view[offset:offset + cfg_len]).decode("utf-8")
        except struct.error as exc:
            raise ValueError(f"{path}: truncated checkpoint ({exc})") from exc
        config = {}
        for line in cfg_text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                config[key] = value
        return cls(arrays=arrays, config=config)


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Experiment knobs, serialized as key=value text. Unknown keys reject."""

    image_height: int = 64
    pad: str = "erp"
    backbone: str = "unet"
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    infer_steps: int = 50
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    fov_set: str = "40,60,90,120"
    mask_prob: float = 0.5
    base_channels: int = 32
    kl_weight: float = 1e-6
    hdr_log_max: float = 1000.0
    dit_blocks: int = 6
    dit_heads: int = 4
    dit_hidden: int = 128
    dit_patch: int = 2
    dit_window: int = 4
    dpam_every: int = 2
    unet_channels: str = "64,128,256"

    @property
    def image_width(self):
        return 2 * self.image_height

    @property
    def latent_height(self):
        return self.image_height // 8

    @property
    def fovs(self):
        return tuple(float(v) for v in self.fov_set.split(","))

    @property
    def unet_widths(self):
        return tuple(int(v) for v in self.unet_channels.split(","))

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kwargs[key] = value.strip()
        return cls.from_overrides(kwargs)

    @classmethod
    def from_overrides(cls, overrides, base=None):
        cfg = dataclasses.replace(base) if base is not None else cls()
        casts = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, value in overrides.items():
            if key not in casts:
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                parsed = str(value).lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            else:
                parsed = str(value)
            setattr(cfg, key, parsed)
        return cfg


def write_meta(path, entries):
    """Write a key=value metadata text file."""
    with open(path, "w", encoding="utf-8") as f:
        for key, value in entries.items():
            f.write(f"{key}={value}\n")


def read_meta(path):
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                key, _, value = line.partition("=")
                entries[key] = value
    return entries
