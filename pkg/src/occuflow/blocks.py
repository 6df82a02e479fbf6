"""Forward-only toy-scale neural building blocks: multi-head (shifted-)
window self-attention with additive bias, patch embedding and
cross-attention fusion.  Validated by algebraic invariants, not training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch


@dataclass(frozen=True)
class AttentionConfig:
    num_heads: int = 3
    model_dim: int = 48
    window_size: int = 8
    shift: int = 0

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by "
                f"num_heads {self.num_heads}")
        if self.shift not in (0, self.window_size // 2):
            raise ConfigError("shift must be 0 or window_size / 2")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def mhsa(q: np.ndarray, k: np.ndarray, v: np.ndarray, bias,
         cfg: AttentionConfig, w_out: np.ndarray | None = None,
         return_attention: bool = False):
    """Multi-head self-attention: per head softmax(QK^T / sqrt(d) + B) V,
    heads concatenated and projected by ``w_out`` (identity by default).

    ``q``, ``k``, ``v`` are (tokens, model_dim); ``bias`` is zero, scalar 0
    or (heads, q_tokens, kv_tokens).
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeMismatch("q, k, v must be (tokens, model_dim)")
    if q.shape[1] != cfg.model_dim or k.shape[1] != cfg.model_dim \
            or v.shape[1] != cfg.model_dim:
        raise ShapeMismatch(f"token dim must be model_dim={cfg.model_dim}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch("k and v must have the same token count")

    h, d = cfg.num_heads, cfg.head_dim
    bias = np.asarray(bias, dtype=np.float64)
    if bias.ndim not in (0, 3):
        raise ShapeMismatch("bias must be scalar or (heads, q_tokens, kv_tokens)")
    if bias.ndim == 3 and bias.shape != (h, q.shape[0], k.shape[0]):
        raise ShapeMismatch(f"bias shape {bias.shape} does not match attention")

    qh = q.reshape(q.shape[0], h, d).transpose(1, 0, 2)   # (h, tq, d)
    kh = k.reshape(k.shape[0], h, d).transpose(1, 0, 2)
    vh = v.reshape(v.shape[0], h, d).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(d)
    scores = scores + (bias if bias.ndim == 3 else bias)
    attn = softmax(scores, axis=-1)                        # (h, tq, tk)
    heads = attn @ vh                                      # (h, tq, d)
    out = heads.transpose(1, 0, 2).reshape(q.shape[0], cfg.model_dim)
    if w_out is not None:
        if w_out.shape != (cfg.model_dim, cfg.model_dim):
            raise ShapeMismatch("w_out must be (model_dim, model_dim)")
        out = out @ w_out
    return (out, attn) if return_attention else out


def window_partition(x: np.ndarray, window: int) -> np.ndarray:
    """Re-tile (H, W, C) into (H*W/window^2, window^2, C) token windows."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeMismatch("expected (H, W, C)")
    H, W, C = x.shape
    if H % window or W % window:
        raise ConfigError(f"window {window} must divide {H}x{W}")
    x = x.reshape(H // window, window, W // window, window, C)
    return x.transpose(0, 2, 1, 3, 4).reshape(-1, window * window, C)


def window_reverse(windows: np.ndarray, window: int, height: int,
                   width: int) -> np.ndarray:
    """Exact inverse of :func:`window_partition`."""
    windows = np.asarray(windows)
    n, tokens, C = windows.shape
    if tokens != window * window or n * tokens != height * width:
        raise ConfigError("window grid does not tile the requested shape")
    x = windows.reshape(height // window, width // window, window, window, C)
    return x.transpose(0, 2, 1, 3, 4).reshape(height, width, C)


def cyclic_shift(x: np.ndarray, shift: int) -> np.ndarray:
    """Toroidal roll by (-shift, -shift); inverted by a +shift roll."""
    return np.roll(np.asarray(x), (-shift, -shift), axis=(0, 1))


def cyclic_unshift(x: np.ndarray, shift: int) -> np.ndarray:
    return np.roll(np.asarray(x), (shift, shift), axis=(0, 1))


def patch_embed(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Non-overlapping 4x4 patch projection: (H, W, C) -> (H/4, W/4, D).

    ``kernel`` has shape (4, 4, C, D); equivalent to a stride-4 convolution
    with kernel size 4.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kernel.ndim != 4 or kernel.shape[:2] != (4, 4):
        raise ConfigError("expected x (H, W, C) and kernel (4, 4, C, D)")
    H, W, C = x.shape
    if H % 4 or W % 4 or kernel.shape[2] != C:
        raise ConfigError("H and W must be divisible by 4 and channels match")
    blocks = x.reshape(H // 4, 4, W // 4, 4, C)
    return np.einsum("hiwjc,ijcd->hwd", blocks, kernel)


def cross_attention(query_feats: np.ndarray, motion_feats: np.ndarray,
                    cfg: AttentionConfig, bias=0.0,
                    w_out: np.ndarray | None = None) -> np.ndarray:
    """Attention with queries from the grid features and keys/values from
    the motion (trajectory) features."""
    return mhsa(query_feats, motion_feats, motion_feats, bias, cfg, w_out)


class CrossAttentionFusion:
    """One cross-attention module per future timestep (8 total), with
    seeded projection weights for reproducible toy examples."""

    def __init__(self, cfg: AttentionConfig, timesteps: int = 8, seed: int = 0):
        self.cfg = cfg
        self.timesteps = timesteps
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(cfg.model_dim)
        self.w_out = [rng.uniform(-scale, scale, (cfg.model_dim, cfg.model_dim))
                      for _ in range(timesteps)]

    def __call__(self, query_feats: np.ndarray,
                 motion_feats: np.ndarray) -> list[np.ndarray]:
        return [cross_attention(query_feats, motion_feats, self.cfg,
                                w_out=self.w_out[t])
                for t in range(self.timesteps)]


def make_bias_table(cfg: AttentionConfig, seed: int = 0) -> np.ndarray:
    """Dense per-head relative-position bias for one window: indexed by the
    (2w-1)^2 possible relative offsets, materialized as
    (heads, window^2, window^2)."""
    w = cfg.window_size
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.1, 0.1, (cfg.num_heads, 2 * w - 1, 2 * w - 1))
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w),
                                  indexing="ij"), axis=-1).reshape(-1, 2)
    rel = coords[:, None, :] - coords[None, :, :] + (w - 1)
    return table[:, rel[:, :, 0], rel[:, :, 1]]


def selftest(verbose: bool = True) -> bool:
    """Run the block invariants; returns True iff everything passes."""
    rng = np.random.default_rng(7)
    cfg = AttentionConfig(num_heads=3, model_dim=48, window_size=4)
    checks = []

    q = rng.normal(size=(16, cfg.model_dim))
    k = rng.normal(size=(16, cfg.model_dim))
    v = rng.normal(size=(16, cfg.model_dim))
    _, attn = mhsa(q, k, v, 0.0, cfg, return_attention=True)
    checks.append(("softmax rows sum to 1",
                   np.allclose(attn.sum(axis=-1), 1.0, atol=1e-6)))

    perm = rng.permutation(16)
    out = mhsa(q, k, v, 0.0, cfg)
    out_p = mhsa(q[perm], k[perm], v[perm], 0.0, cfg)
    checks.append(("permutation equivariance",
                   np.allclose(out[perm], out_p, atol=1e-6)))

    x = rng.normal(size=(8, 8, 3))
    rt = window_reverse(window_partition(x, 4), 4, 8, 8)
    checks.append(("window round trip", np.array_equal(rt, x)))
    checks.append(("cyclic shift round trip",
                   np.array_equal(cyclic_unshift(cyclic_shift(x, 3), 3), x)))

    kern = rng.normal(size=(4, 4, 3, 6))
    a, b = rng.normal(size=(8, 8, 3)), rng.normal(size=(8, 8, 3))
    lin = patch_embed(2.0 * a + 3.0 * b, kern)
    checks.append(("patch_embed linearity",
                   np.allclose(lin, 2.0 * patch_embed(a, kern) +
                               3.0 * patch_embed(b, kern), atol=1e-6)))
    big = rng.normal(size=(256, 256, 3))
    checks.append(("patch_embed 256 -> 64",
                   patch_embed(big, kern).shape == (64, 64, 6)))

    ok = True
    for name, passed in checks:
        ok &= bool(passed)
        if verbose:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}")
    return ok
