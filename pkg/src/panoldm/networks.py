"""Denoiser backbones.

Two interchangeable networks map the 9-channel conditioned latent
[noisy latent | masked-image latent | mask] plus an integer timestep to a
4-channel noise prediction:

* PanoDiT: patch tokens through pre-norm transformer blocks modulated by a
  single shared timestep projection (per-block learned offsets, zero-init
  gates so every block starts as the identity). Every ``dpam_every``-th
  block is followed by a pitch-attention block: windowed cross-attention
  from the running tokens to tokens embedded from the input warped by the
  90-degree pitch rotation, which stitches pole neighbourhoods together.
* UNet: two stride-2 stages of residual blocks with per-block learned
  timestep projections, one self-attention at the bottleneck, and a skip
  decoder.

Both are exactly zero maps at initialization (zero-init output heads), so
early training is stable and the timestep enters only through learned
projections.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .modules import Conv2d, GroupNorm, Linear, Module
from .tensor import (PadMode, Tensor, bilinear_warp, concat, default_dtype,
                     modulated_layer_norm, multi_head_attention)

TIMESTEP_FEATURES = 256


def timestep_embedding(t, dim=TIMESTEP_FEATURES):
    """Sinusoidal features of an integer timestep, shape (1, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)]).astype(default_dtype())
    return emb[None, :]


# ---------------------------------------------------------------------------
# PanoDiT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanoDiTConfig:
    blocks: int = 6
    heads: int = 4
    hidden: int = 128
    patch: int = 2
    dpam_every: int = 2
    window: int = 4

    def __post_init__(self):
        if self.blocks % self.dpam_every != 0:
            raise ValueError("blocks must be divisible by dpam_every")
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")

    @property
    def n_dpam(self):
        return self.blocks // self.dpam_every

    @classmethod
    def full_size(cls):
        return cls(blocks=21, heads=16, hidden=1024, patch=2, dpam_every=7, window=4)


class PatchEmbed(Module):
    def __init__(self, c_in, patch, hidden, n_tokens, rng):
        self.patch = patch
        self.c_in = c_in
        self.proj = Linear(c_in * patch * patch, hidden, rng)
        self.pos = Tensor(rng.normal((n_tokens, hidden)) * 0.02, requires_grad=True)

    def __call__(self, x):
        n, c, h, w = x.shape
        p = self.patch
        gh, gw = h // p, w // p
        tok = x.reshape(n, c, gh, p, gw, p).transpose((0, 2, 4, 1, 3, 5))
        tok = tok.reshape(n, gh * gw, c * p * p)
        return self.proj(tok) + self.pos


def unpatchify(tokens, gh, gw, patch, c_out):
    n = tokens.shape[0]
    x = tokens.reshape(n, gh, gw, c_out, patch, patch).transpose((0, 3, 1, 4, 2, 5))
    return x.reshape(n, c_out, gh * patch, gw * patch)


class AdaLNSingle(Module):
    """Shared two-layer timestep projection plus per-entry learned offsets.

    Produces six modulation vectors per entry:
    (shift_attn, scale_attn, gate_attn, shift_mlp, scale_mlp, gate_mlp).
    The projection head and all offsets start at zero, so every gate (and
    every shift/scale) is zero for every timestep at initialization.
    """

    def __init__(self, hidden, n_entries, rng):
        self.hidden = hidden
        self.fc1 = Linear(TIMESTEP_FEATURES, hidden, rng)
        self.fc2 = Linear(hidden, 6 * hidden, rng, zero_init=True)
        self.offset = Tensor(np.zeros((n_entries, 6 * hidden), dtype=default_dtype()),
                             requires_grad=True)

    def __call__(self, t_emb, entry):
        base = self.fc2(self.fc1(t_emb).silu()) + self.offset[entry]
        six = base.reshape(6, self.hidden)
        return tuple(six[i] for i in range(6))


class DiTBlock(Module):
    def __init__(self, hidden, heads, rng):
        self.heads = heads
        self.wq = Linear(hidden, hidden, rng)
        self.wk = Linear(hidden, hidden, rng)
        self.wv = Linear(hidden, hidden, rng)
        self.wo = Linear(hidden, hidden, rng)
        self.fc1 = Linear(hidden, 4 * hidden, rng)
        self.fc2 = Linear(4 * hidden, hidden, rng)

    def __call__(self, x, mods):
        shift_a, scale_a, gate_a, shift_m, scale_m, gate_m = mods
        h = modulated_layer_norm(x, shift_a, scale_a)
        a = multi_head_attention(self.wq(h), self.wk(h), self.wv(h), self.heads)
        x = x + self.wo(a) * gate_a
        h = modulated_layer_norm(x, shift_m, scale_m)
        m = self.fc2(self.fc1(h).silu())
        return x + m * gate_m


def window_partition(tokens, gh, gw, ws):
    """(N, gh*gw, D) -> (N * n_windows, ws*ws, D)."""
    n, _, d = tokens.shape
    x = tokens.reshape(n, gh // ws, ws, gw // ws, ws, d).transpose((0, 1, 3, 2, 4, 5))
    return x.reshape(n * (gh // ws) * (gw // ws), ws * ws, d)


def window_merge(windows, n, gh, gw, ws):
    d = windows.shape[-1]
    x = windows.reshape(n, gh // ws, gw // ws, ws, ws, d).transpose((0, 1, 3, 2, 4, 5))
    return x.reshape(n, gh * gw, d)


class DpamBlock(Module):
    """Pitch attention with timestep modulation.

    Queries come from the running token stream; keys/values come from the
    same-index window of the pitched-view tokens. The residual gate starts
    at zero, so the block is the identity at initialization.
    """

    def __init__(self, hidden, heads, rng):
        self.heads = heads
        self.wq = Linear(hidden, hidden, rng)
        self.wk = Linear(hidden, hidden, rng)
        self.wv = Linear(hidden, hidden, rng)
        self.wo = Linear(hidden, hidden, rng)

    def __call__(self, x, pitched, mods, gh, gw, ws):
        shift_q, scale_q, gate, shift_kv, scale_kv, _unused = mods
        n = x.shape[0]
        q_in = modulated_layer_norm(x, shift_q, scale_q)
        kv_in = modulated_layer_norm(pitched, shift_kv, scale_kv)
        qw = window_partition(q_in, gh, gw, ws)
        kw = window_partition(kv_in, gh, gw, ws)
        a = multi_head_attention(self.wq(qw), self.wk(kw), self.wv(kw), self.heads)
        out = window_merge(self.wo(a), n, gh, gw, ws)
        return x + out * gate


class PanoDiT(Module):
    """Panorama-aware diffusion transformer over a fixed latent grid."""

    def __init__(self, cfg, latent_h, latent_w, rng):
        if latent_h % cfg.patch or latent_w % cfg.patch:
            raise ValueError(f"latent {latent_h}x{latent_w} not divisible by patch {cfg.patch}")
        gh, gw = latent_h // cfg.patch, latent_w // cfg.patch
        if gh % cfg.window or gw % cfg.window:
            raise ValueError(f"token grid {gh}x{gw} not divisible by window {cfg.window}")
        self.cfg = cfg
        self.grid = (gh, gw)
        self.patch = PatchEmbed(9, cfg.patch, cfg.hidden, gh * gw, rng)
        self.adaln = AdaLNSingle(cfg.hidden, cfg.blocks + cfg.n_dpam + 1, rng)
        self.block = [DiTBlock(cfg.hidden, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.dpam = [DpamBlock(cfg.hidden, cfg.heads, rng) for _ in range(cfg.n_dpam)]
        self.head = Linear(cfg.hidden, 4 * cfg.patch * cfg.patch, rng, zero_init=True)
        rows, cols = geometry.pitch_warp_coords(latent_h, latent_w)
        self._warp_rows = rows
        self._warp_cols = cols

    def __call__(self, x, t):
        n, c, h, w = x.shape
        if c != 9:
            raise ValueError(f"expected 9 input channels, got {c}")
        cfg = self.cfg
        gh, gw = self.grid
        t_emb = Tensor(timestep_embedding(t))
        tokens = self.patch(x)
        pitched_map = bilinear_warp(x, self._warp_rows, self._warp_cols)
        pitched = self.patch(pitched_map)
        d = 0
        for i in range(cfg.blocks):
            tokens = self.block[i](tokens, self.adaln(t_emb, i))
            if (i + 1) % cfg.dpam_every == 0:
                mods = self.adaln(t_emb, cfg.blocks + d)
                tokens = self.dpam[d](tokens, pitched, mods, gh, gw, cfg.window)
                d += 1
        final = self.adaln(t_emb, cfg.blocks + cfg.n_dpam)
        tokens = modulated_layer_norm(tokens, final[0], final[1])
        return unpatchify(self.head(tokens), gh, gw, cfg.patch, 4)


# ---------------------------------------------------------------------------
# U-Net
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UNetConfig:
    channels: tuple = (64, 128, 256)
    heads: int = 4
    pad: PadMode = PadMode.ZERO  # spherical pad stays an opt-in experiment here


class ResBlock(Module):
    def __init__(self, c_in, c_out, rng, pad):
        self.gn1 = GroupNorm(c_in)
        self.conv1 = Conv2d(c_in, c_out, 3, rng, pad=pad)
        self.temb = Linear(TIMESTEP_FEATURES, c_out, rng)
        self.gn2 = GroupNorm(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, pad=pad, zero_init=True)
        self.skip = Conv2d(c_in, c_out, 1, rng, bias=False) if c_in != c_out else None

    def __call__(self, x, t_emb):
        h = self.conv1(self.gn1(x).silu())
        h = h + self.temb(t_emb).reshape(1, -1, 1, 1)
        h = self.conv2(self.gn2(h).silu())
        base = self.skip(x) if self.skip is not None else x
        return base + h


class AttnBlock(Module):
    def __init__(self, channels, heads, rng):
        self.heads = heads
        self.gn = GroupNorm(channels)
        self.wq = Linear(channels, channels, rng)
        self.wk = Linear(channels, channels, rng)
        self.wv = Linear(channels, channels, rng)
        self.wo = Linear(channels, channels, rng, zero_init=True)

    def __call__(self, x):
        n, c, h, w = x.shape
        tok = self.gn(x).reshape(n, c, h * w).transpose((0, 2, 1))
        a = multi_head_attention(self.wq(tok), self.wk(tok), self.wv(tok), self.heads)
        a = self.wo(a).transpose((0, 2, 1)).reshape(n, c, h, w)
        return x + a


class DownStage(Module):
    def __init__(self, c_in, c_out, rng, pad):
        self.res = ResBlock(c_in, c_in, rng, pad)
        self.down = Conv2d(c_in, c_out, 3, rng, stride=2, pad=pad)


class UpStage(Module):
    def __init__(self, c_in, c_skip, c_out, rng, pad):
        self.conv = Conv2d(c_in, c_out, 3, rng, pad=pad)
        self.res = ResBlock(c_out + c_skip, c_out, rng, pad)


class UNet(Module):
    """Compact conditioned diffusion U-Net (two downsampling stages)."""

    def __init__(self, cfg, rng):
        c0, c1, c2 = cfg.channels
        pad = cfg.pad
        self.cfg = cfg
        self.stem = Conv2d(9, c0, 3, rng, pad=pad)
        self.stage = [DownStage(c0, c1, rng, pad), DownStage(c1, c2, rng, pad)]
        self.mid1 = ResBlock(c2, c2, rng, pad)
        self.mid_attn = AttnBlock(c2, cfg.heads, rng)
        self.mid2 = ResBlock(c2, c2, rng, pad)
        self.up = [UpStage(c2, c1, c1, rng, pad), UpStage(c1, c0, c0, rng, pad)]
        self.out_gn = GroupNorm(c0)
        self.out_conv = Conv2d(c0, 4, 3, rng, pad=pad, zero_init=True)

    def __call__(self, x, t):
        from .tensor import upsample_nearest2x

        n, c, h, w = x.shape
        if h % 4 or w % 4:
            raise ValueError(f"latent {h}x{w} must be divisible by 4")
        t_emb = Tensor(timestep_embedding(t))
        s0 = self.stem(x)
        r0 = self.stage[0].res(s0, t_emb)
        d0 = self.stage[0].down(r0)
        r1 = self.stage[1].res(d0, t_emb)
        d1 = self.stage[1].down(r1)
        m = self.mid2(self.mid_attn(self.mid1(d1, t_emb)), t_emb)
        u = self.up[0].conv(upsample_nearest2x(m))
        u = self.up[0].res(concat([u, r1], axis=1), t_emb)
        u = self.up[1].conv(upsample_nearest2x(u))
        u = self.up[1].res(concat([u, r0], axis=1), t_emb)
        return self.out_conv(self.out_gn(u).silu())
