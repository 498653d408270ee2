"""Small vision transformer backbone with optional prompt-token injection.

Each layer accepts an input sequence [class, prompts, patches]; the outputs at
prompt positions are computed and then dropped, so prompt tokens influence the
class/patch stream only through attention. The per-depth token maps (class +
patches, prompts excluded) are recorded in a trace for downstream concept
extraction and explanation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch
from torch import nn


@dataclass(frozen=True)
class BackboneConfig:
    layers: int
    dim: int
    heads: int
    image_size: int
    patch_size: int
    num_classes: int
    ffn_mult: int = 4

    def __post_init__(self):
        if self.layers < 2:
            raise ValueError("need at least 2 layers for multilayer aggregation")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.image_size % self.patch_size != 0:
            raise ValueError("image_size must be divisible by patch_size")
        if self.num_classes < 2:
            raise ValueError("need at least 2 disease classes")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    def to_dict(self) -> dict:
        return {
            "layers": self.layers,
            "dim": self.dim,
            "heads": self.heads,
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "num_classes": self.num_classes,
            "ffn_mult": self.ffn_mult,
        }


@dataclass
class LayerTrace:
    """Token maps available at each depth: index 0 is the post-patch-embedding
    map, index l the output of layer l. Prompt positions are never included."""

    token_maps: list[torch.Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.token_maps)


class TransformerBlock(nn.Module):
    """Pre-norm block: multi-head self-attention + GELU MLP, both residual."""

    def __init__(self, dim: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, ffn_mult * dim),
            nn.GELU(),
            nn.Linear(ffn_mult * dim, dim),
        )

    def forward(self, x: torch.Tensor, return_attn: bool = False):
        b, t, d = x.shape
        h = self.norm1(x)
        qkv = self.qkv(h).reshape(b, t, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.proj(out)
        x = x + self.mlp(self.norm2(x))
        if return_attn:
            return x, attn
        return x


# Maps a depth index and the token map at that depth to a (B, N, dim) prompt matrix.
PromptFn = Callable[[int, torch.Tensor], torch.Tensor]


class ViTBackbone(nn.Module):
    """Vision transformer whose forward pass can interleave prompt tokens.

    Prompt tokens receive no positional encoding and participate in full
    self-attention; their layer outputs are discarded before the next depth.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        d = config.dim
        self.patch_proj = nn.Conv2d(3, d, kernel_size=config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.randn(1, 1, d) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(1, 1 + config.n_patches, d) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(d, config.heads, config.ffn_mult) for _ in range(config.layers)
        )

    def patch_embed(self, images: torch.Tensor) -> torch.Tensor:
        """(B, H, W, 3) pixels in [0, 1] -> (B, 1 + n_patches, dim) tokens."""
        if images.ndim == 3:
            images = images.unsqueeze(0)
        b, h, w, c = images.shape
        s = self.config.image_size
        if (h, w, c) != (s, s, 3):
            raise ValueError(f"expected ({s}, {s}, 3) images, got ({h}, {w}, {c})")
        x = self.patch_proj(images.permute(0, 3, 1, 2))  # (B, d, g, g)
        x = x.flatten(2).transpose(1, 2)  # (B, n_patches, d)
        x = torch.cat([self.cls_token.expand(b, -1, -1).to(x.dtype), x], dim=1)
        return x + self.pos_embed.to(x.dtype)

    def forward_layer(self, layer: int, seq: torch.Tensor, n_prompts: int = 0) -> torch.Tensor:
        """Run one block; when prompts are present at positions [1, 1+n), drop
        their outputs and return only [class, patches]."""
        out = self.blocks[layer](seq)
        if n_prompts:
            out = torch.cat([out[:, :1], out[:, 1 + n_prompts :]], dim=1)
        return out

    def encode(self, images: torch.Tensor, prompt_fn: Optional[PromptFn] = None) -> LayerTrace:
        """Full forward pass recording the token map at every depth.

        With ``prompt_fn`` set, the prompts for layer l are generated from the
        depth-(l-1) token map and concatenated between the class token and the
        patches; without it this is a plain transformer forward.
        """
        x = self.patch_embed(images)
        trace = LayerTrace(token_maps=[x])
        for layer in range(self.config.layers):
            if prompt_fn is not None:
                prompts = prompt_fn(layer, x)
                seq = torch.cat([x[:, :1], prompts, x[:, 1:]], dim=1)
                x = self.forward_layer(layer, seq, n_prompts=prompts.shape[1])
            else:
                x = self.forward_layer(layer, x)
            trace.token_maps.append(x)
        return trace
