"""ViSK-GAT: residual image backbone, pose embedding, FGAM, MGCM and classifier.

Every stage is a function of ``(inputs, params, cfg)``. Inputs may be a
single sample (image [3, H, W], pose [33, 2]) or a batch with a leading
batch axis; outputs keep the same batching.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from math import prod
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import checkpoint
from .autodiff import functional as F
from .autodiff import nn
from .autodiff.rng import Rng
from .autodiff.tensor import Tensor, as_tensor, default_dtype
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ViskGatConfig:
    image_size: int = 224
    token_count: int = 256
    token_dim: int = 128
    pose_points: int = 33
    fgam_heads: int = 8
    fgam_ffn_hidden: int = 512
    fgam_lt_blocks: int = 2
    mgcm_dim: int = 256
    mgcm_heads: int = 4
    mgcm_layers: int = 2
    mgcm_ffn_hidden: int = 1024
    fusion_dim: int = 512
    num_classes: int = 8
    dropout_rate: float = 0.1
    # patchify stem: kernel == stride
    stem_stride: int = 7
    # (channels, stride of the first block, residual blocks)
    backbone_stages: tuple = ((32, 1, 2), (64, 2, 2), (128, 1, 2), (128, 1, 2))
    norm_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "backbone_stages", tuple(tuple(int(v) for v in s) for s in self.backbone_stages))
        if self.token_dim % self.fgam_heads:
            raise ConfigError(f"token_dim {self.token_dim} not divisible by fgam_heads {self.fgam_heads}")
        if self.mgcm_dim % 2:
            raise ConfigError("mgcm_dim must be even")
        if (2 * self.mgcm_dim) % self.mgcm_heads or self.mgcm_dim % self.mgcm_heads:
            raise ConfigError(f"mgcm_dim {self.mgcm_dim} not divisible by mgcm_heads {self.mgcm_heads}")
        if not self.backbone_stages:
            raise ConfigError("backbone needs at least one stage")
        if self.backbone_stages[-1][0] != self.token_dim:
            raise ConfigError("last backbone stage must have token_dim channels")
        down = self.stem_stride * prod(s[1] for s in self.backbone_stages)
        if self.image_size % down:
            raise ConfigError(f"image_size {self.image_size} not divisible by total stride {down}")
        grid = self.image_size // down
        if grid * grid != self.token_count:
            raise ConfigError(f"backbone yields {grid}x{grid} cells, token_count is {self.token_count}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    @property
    def grid(self) -> int:
        return int(round(self.token_count ** 0.5))

    @classmethod
    def full(cls) -> "ViskGatConfig":
        return cls()

    @classmethod
    def desk(cls, **kw) -> "ViskGatConfig":
        """64x64 images, 8x8 token grid, full-size widths everywhere else."""
        base = dict(image_size=64, token_count=64, stem_stride=4,
                    backbone_stages=((32, 1, 1), (64, 2, 1), (128, 1, 1)))
        return cls(**{**base, **kw})

    @classmethod
    def desk_small(cls, **kw) -> "ViskGatConfig":
        """64x64 images with narrow widths; trains in minutes on one core."""
        base = dict(image_size=64, token_count=64, token_dim=32, fgam_heads=4, fgam_ffn_hidden=64,
                    fgam_lt_blocks=2, mgcm_dim=32, mgcm_heads=4, mgcm_layers=2, mgcm_ffn_hidden=128,
                    fusion_dim=64, stem_stride=4, backbone_stages=((16, 1, 1), (32, 2, 1)))
        return cls(**{**base, **kw})

    @classmethod
    def tiny(cls, **kw) -> "ViskGatConfig":
        """16x16 images, token width 8, MGCM width 16: for gradient checks."""
        base = dict(image_size=16, token_count=4, token_dim=8, pose_points=33, fgam_heads=2,
                    fgam_ffn_hidden=16, fgam_lt_blocks=2, mgcm_dim=16, mgcm_heads=2, mgcm_layers=2,
                    mgcm_ffn_hidden=32, fusion_dim=16, stem_stride=4, backbone_stages=((4, 1, 1), (8, 2, 1)))
        return cls(**{**base, **kw})

    @classmethod
    def preset(cls, name: str) -> "ViskGatConfig":
        presets = {"full": cls.full, "desk": cls.desk, "desk_small": cls.desk_small, "tiny": cls.tiny}
        if name not in presets:
            raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(presets)}")
        return presets[name]()

    def to_json(self) -> dict:
        d = asdict(self)
        d["backbone_stages"] = [list(s) for s in self.backbone_stages]
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ViskGatConfig":
        obj = dict(obj)
        if "preset" in obj:
            base = cls.preset(obj.pop("preset"))
            return replace(base, **obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "ViskGatConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


class ViskGatParams(dict):
    """Learnable tensors keyed by module path, e.g. ``fgam.block0.attn.w_q``."""

    def group(self, prefix: str) -> dict[str, Tensor]:
        return nn.sub(self, prefix)

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.items()}

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.values())

    def save(self, path) -> None:
        checkpoint.save(path, self.arrays())

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], dtype=None) -> "ViskGatParams":
        dtype = dtype or default_dtype()
        return cls({k: Tensor(np.array(v, dtype=dtype), requires_grad=True) for k, v in arrays.items()})

    @classmethod
    def load(cls, path, cfg: Optional[ViskGatConfig] = None) -> "ViskGatParams":
        params = cls.from_arrays(checkpoint.load(path))
        if cfg is not None:
            expected = init_params(cfg, Rng(0))
            if set(expected) != set(params):
                raise ConfigError(f"{path}: parameter names do not match the model config")
            for k, t in expected.items():
                if params[k].shape != t.shape:
                    raise ConfigError(f"{path}: {k} has shape {params[k].shape}, config expects {t.shape}")
        return params


def init_params(cfg: ViskGatConfig, rng: Rng) -> ViskGatParams:
    """Fan-in uniform weights, zero biases, unit/zero norm affines."""
    p: dict[str, Tensor] = {}

    def put(prefix, d):
        p.update({f"{prefix}.{k}": v for k, v in d.items()})

    r = rng.child(0)
    put("backbone.stem", nn.init_conv(r.child(0), 3, cfg.backbone_stages[0][0], cfg.stem_stride))
    c_in = cfg.backbone_stages[0][0]
    for si, (ch, stride, blocks) in enumerate(cfg.backbone_stages):
        for bi in range(blocks):
            s = stride if bi == 0 else 1
            pre = f"backbone.s{si}.b{bi}"
            rb = r.child(1, si, bi)
            put(f"{pre}.norm1", nn.init_norm(c_in))
            put(f"{pre}.conv1", nn.init_conv(rb.child(0), c_in, ch, 3))
            put(f"{pre}.norm2", nn.init_norm(ch))
            put(f"{pre}.conv2", nn.init_conv(rb.child(1), ch, ch, 3))
            if s != 1 or c_in != ch:
                put(f"{pre}.proj", nn.init_conv(rb.child(2), c_in, ch, 1))
            c_in = ch
    put("backbone.out_norm", nn.init_norm(cfg.token_dim))

    r = rng.child(1)
    emb = nn.init_linear(r.child(0), 2, cfg.token_dim)
    p["pose.W_e"], p["pose.b_e"] = emb["w"], emb["b"]
    put("pose.block", nn.init_block(r.child(1), cfg.token_dim, cfg.fgam_ffn_hidden))

    r = rng.child(2)
    put("fgam.attn", nn.init_attention(r.child(0), cfg.token_dim))
    put("fgam.norm", nn.init_norm(cfg.token_dim))
    for i in range(cfg.fgam_lt_blocks):
        put(f"fgam.block{i}", nn.init_block(r.child(1, i), cfg.token_dim, cfg.fgam_ffn_hidden))
    put("fgam.ffn", nn.init_ffn(r.child(2), cfg.token_dim, cfg.fgam_ffn_hidden))
    put("fgam.out_norm", nn.init_norm(cfg.token_dim))

    r = rng.child(3)
    d = cfg.mgcm_dim
    put("mgcm.img_proj", nn.init_linear(r.child(0), cfg.token_dim, d))
    put("mgcm.img_norm", nn.init_norm(d))
    put("mgcm.pose_proj1", nn.init_linear(r.child(1), cfg.token_dim, d // 2))
    put("mgcm.pose_proj2", nn.init_linear(r.child(2), d // 2, d))
    put("mgcm.cross_attn", nn.init_attention(r.child(3), d))
    for i in range(cfg.mgcm_layers):
        put(f"mgcm.layer{i}", nn.init_block(r.child(4, i), 2 * d, cfg.mgcm_ffn_hidden))
    put("mgcm.fusion", nn.init_linear(r.child(5), 2 * d, cfg.fusion_dim))
    put("mgcm.fusion_norm", nn.init_norm(cfg.fusion_dim))

    put("head", nn.init_linear(rng.child(4), cfg.fusion_dim, cfg.num_classes))
    return ViskGatParams(p)


def zero_cross_attention_values(params: ViskGatParams) -> None:
    """Ablation hook: zero MGCM's value projection so no pose information reaches F_attn."""
    for k in ("mgcm.cross_attn.w_v", "mgcm.cross_attn.b_v"):
        params[k].data = np.zeros_like(params[k].data)


@dataclass
class Trace:
    """Intermediate features of one forward pass (numpy arrays), for tests and inspection."""

    features: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)

    def keep(self, name: str, t: Tensor) -> Tensor:
        self.features[name] = t.data
        return t

    def weights(self, name: str) -> list:
        return self.attention.setdefault(name, [])


def _weights(trace: Optional[Trace], name: str):
    return trace.weights(name) if trace is not None else None


def _keep(trace: Optional[Trace], name: str, t: Tensor) -> Tensor:
    return trace.keep(name, t) if trace is not None else t


def _channel_norm(x: Tensor, params, prefix: str, eps: float) -> Tensor:
    """LayerNorm over the channel axis of a [B, C, H, W] map."""
    h = F.transpose(x, (0, 2, 3, 1))
    h = F.layer_norm(h, params[f"{prefix}.gamma"], params[f"{prefix}.beta"], eps)
    return F.transpose(h, (0, 3, 1, 2))


def residual_block(x: Tensor, params, prefix: str, stride: int = 1, eps: float = 1e-5) -> Tensor:
    """Pre-activation block: ``shortcut(x) + conv(relu(norm(conv(relu(norm(x))))))``.

    Without a ``proj`` entry the shortcut is the identity, so zeroed conv
    weights make the block the identity map.
    """
    h = F.relu(_channel_norm(x, params, f"{prefix}.norm1", eps))
    h = F.conv2d(h, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"], stride=stride, padding=1)
    h = F.relu(_channel_norm(h, params, f"{prefix}.norm2", eps))
    h = F.conv2d(h, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"], stride=1, padding=1)
    if f"{prefix}.proj.w" in params:
        x = F.conv2d(x, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"], stride=stride)
    elif stride != 1:
        raise ShapeError(f"{prefix}: strided block needs a projection shortcut")
    return F.add(x, h)


def _batched(x: Tensor, rank: int) -> tuple[Tensor, bool]:
    if x.ndim == rank:
        return F.reshape(x, (1,) + x.shape), True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected a {rank}-D sample or {rank + 1}-D batch, got shape {x.shape}")


def _unbatch(x: Tensor, squeeze: bool) -> Tensor:
    return F.reshape(x, x.shape[1:]) if squeeze else x


def image_backbone(img, params, cfg: ViskGatConfig) -> Tensor:
    """[3, S, S] image -> [token_count, token_dim] tokens (cells flattened row-major)."""
    x, squeeze = _batched(as_tensor(img), 3)
    if x.shape[1:] != (3, cfg.image_size, cfg.image_size):
        raise ConfigError(f"image shape {x.shape[1:]} does not match config ({cfg.image_size}x{cfg.image_size})")
    x = F.conv2d(x, params["backbone.stem.w"], params["backbone.stem.b"], stride=cfg.stem_stride)
    for si, (_, stride, blocks) in enumerate(cfg.backbone_stages):
        for bi in range(blocks):
            x = residual_block(x, params, f"backbone.s{si}.b{bi}", stride if bi == 0 else 1, cfg.norm_eps)
    B, C, H, W = x.shape
    tokens = F.reshape(F.transpose(x, (0, 2, 3, 1)), (B, H * W, C))
    tokens = F.layer_norm(tokens, params["backbone.out_norm.gamma"], params["backbone.out_norm.beta"], cfg.norm_eps)
    return _unbatch(tokens, squeeze)


def embed_pose(P, params) -> Tensor:
    """Affine projection of each keypoint row: ``P @ W_e + b_e``."""
    P = as_tensor(P)
    if P.ndim < 2 or P.shape[-1] != 2:
        raise ShapeError(f"pose input must be [..., N, 2], got {P.shape}")
    return F.linear(P, params["pose.W_e"], params["pose.b_e"])


def _check_pose(P: Tensor, cfg: ViskGatConfig) -> None:
    if P.ndim < 2 or P.shape[-2:] != (cfg.pose_points, 2):
        raise ShapeError(f"pose input must be [..., {cfg.pose_points}, 2], got {P.shape}")


def pose_transformer(E_pose: Tensor, params, cfg: ViskGatConfig, rng=None, train=False, trace=None) -> Tensor:
    return nn.transformer_block(
        E_pose, nn.sub(params, "pose.block"), cfg.fgam_heads, cfg.dropout_rate, rng, train, _weights(trace, "pose"),
    )


def fgam(F_img: Tensor, params, cfg: ViskGatConfig, rng=None, train=False, trace=None) -> Tensor:
    """Self-attention refinement of image tokens followed by two transformer blocks and a final FFN."""
    a = nn.multi_head_attention(F_img, F_img, F_img, cfg.fgam_heads, nn.sub(params, "fgam.attn"),
                                _weights(trace, "fgam.attn"))
    x = F.layer_norm(F.add(F_img, a), params["fgam.norm.gamma"], params["fgam.norm.beta"], cfg.norm_eps)
    _keep(trace, "F_1", x)
    for i in range(cfg.fgam_lt_blocks):
        x = nn.transformer_block(x, nn.sub(params, f"fgam.block{i}"), cfg.fgam_heads, cfg.dropout_rate,
                                 rng, train, _weights(trace, f"fgam.block{i}"))
        _keep(trace, f"F_{i + 2}", x)
    f = nn.ffn(x, nn.sub(params, "fgam.ffn"))
    return F.layer_norm(F.add(x, f), params["fgam.out_norm.gamma"], params["fgam.out_norm.beta"], cfg.norm_eps)


def mgcm(F_img_hat: Tensor, F_pose: Tensor, params, cfg: ViskGatConfig, rng=None, train=False,
         trace=None) -> Tensor:
    """Cross-attention of image tokens over pose tokens, pooled fusion transformer, fusion head."""
    img = F.linear(F_img_hat, params["mgcm.img_proj.w"], params["mgcm.img_proj.b"])
    img = F.gelu(F.layer_norm(img, params["mgcm.img_norm.gamma"], params["mgcm.img_norm.beta"], cfg.norm_eps))
    _keep(trace, "F_img_proj", img)
    pose = F.gelu(F.linear(F_pose, params["mgcm.pose_proj1.w"], params["mgcm.pose_proj1.b"]))
    pose = F.linear(pose, params["mgcm.pose_proj2.w"], params["mgcm.pose_proj2.b"])
    _keep(trace, "F_pose_proj", pose)
    attn = nn.multi_head_attention(img, pose, pose, cfg.mgcm_heads, nn.sub(params, "mgcm.cross_attn"),
                                   _weights(trace, "mgcm.cross_attn"))
    _keep(trace, "F_attn", attn)
    fused = F.mean(F.concat([img, attn], axis=-1), axis=-2, keepdims=True)
    _keep(trace, "F_fused", fused)
    x = fused
    for i in range(cfg.mgcm_layers):
        x = nn.transformer_block(x, nn.sub(params, f"mgcm.layer{i}"), cfg.mgcm_heads, cfg.dropout_rate,
                                 rng, train, _weights(trace, f"mgcm.layer{i}"))
    x = F.reshape(x, x.shape[:-2] + x.shape[-1:])
    x = F.linear(x, params["mgcm.fusion.w"], params["mgcm.fusion.b"])
    return F.gelu(F.layer_norm(x, params["mgcm.fusion_norm.gamma"], params["mgcm.fusion_norm.beta"], cfg.norm_eps))


def classify(F_corr: Tensor, params) -> Tensor:
    return F.linear(F_corr, params["head.w"], params["head.b"])


@dataclass
class ForwardOutput:
    logits: Tensor
    probs: Tensor
    trace: Optional[Trace] = None


def forward(img, P, params, cfg: ViskGatConfig, mode: str = "eval", rng: Optional[Rng] = None,
            trace: Optional[Trace] = None) -> ForwardOutput:
    """Full network. ``mode="train"`` enables dropout, which draws from ``rng``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    if train and cfg.dropout_rate > 0 and rng is None:
        raise ValueError("train mode needs an Rng for dropout")
    img = as_tensor(img)
    P = as_tensor(P)
    _check_pose(P, cfg)
    squeeze = img.ndim == 3
    if squeeze != (P.ndim == 2):
        raise ShapeError("image and pose inputs must both be single samples or both batches")
    if squeeze:
        img = F.reshape(img, (1,) + img.shape)
        P = F.reshape(P, (1,) + P.shape)
    if img.shape[0] != P.shape[0]:
        raise ShapeError(f"batch sizes differ: {img.shape[0]} images, {P.shape[0]} poses")

    F_img = _keep(trace, "F_img", image_backbone(img, params, cfg))
    E_pose = _keep(trace, "E_pose", embed_pose(P, params))
    F_pose = _keep(trace, "F_pose", pose_transformer(E_pose, params, cfg, rng, train, trace))
    F_hat = _keep(trace, "F_img_hat", fgam(F_img, params, cfg, rng, train, trace))
    F_corr = _keep(trace, "F_corr", mgcm(F_hat, F_pose, params, cfg, rng, train, trace))
    logits = classify(F_corr, params)
    if squeeze:
        logits = F.reshape(logits, logits.shape[1:])
        if trace is not None:
            trace.features = {k: v[0] for k, v in trace.features.items()}
    _keep(trace, "logits", logits)
    return ForwardOutput(logits, F.softmax(logits, axis=-1), trace)


def save_model(path, params: ViskGatParams, cfg: ViskGatConfig, extra: Optional[dict] = None) -> None:
    """Checkpoint plus a ``<path>.json`` sidecar holding the model config."""
    params.save(path)
    meta = {"model": cfg.to_json(), **(extra or {})}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> tuple[ViskGatParams, ViskGatConfig, dict]:
    meta_path = Path(str(path) + ".json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{meta_path}: missing checkpoint sidecar ({exc.strerror})") from exc
    cfg = ViskGatConfig.from_json(meta["model"])
    return ViskGatParams.load(path, cfg), cfg, meta
