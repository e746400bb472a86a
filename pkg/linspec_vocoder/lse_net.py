"""Linear spectrogram estimation network: a patch transformer denoiser.

Tokens live on a [frequency rows x time tokens] grid. Attention runs along time only,
with every frequency row an independent sequence; rows communicate through a dense
mixing map after attention. Timestep and mel-frame conditions drive adaLN-zero
modulation per time token.
"""

from dataclasses import dataclass
from typing import Optional
import logging
import math

import torch
import torch.nn.functional as F
from torch import nn
from einops import rearrange

from .config import LseConfig

logger = logging.getLogger(__name__)


@dataclass
class ConditionEmbedding:
    c_prime: torch.Tensor  # [B, T_tok, hidden]
    t_prime: torch.Tensor  # [B, hidden]

    @property
    def fused(self) -> torch.Tensor:
        return self.t_prime.unsqueeze(1) + self.c_prime


def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    """x: [B, F, T, H]; shift/scale: [B, T, H], shared by every frequency row."""
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


def time_positional_embedding(n_tokens: int, hidden: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """Fixed sinusoidal embedding [n_tokens x hidden] over time token index."""
    if n_tokens < 1:
        raise ValueError("need at least one time token")
    half = hidden // 2
    omega = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    pos = torch.arange(n_tokens, dtype=torch.float64)[:, None] * omega[None]
    emb = torch.cat([torch.sin(pos), torch.cos(pos)], dim=-1)
    if hidden % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb.to(device=device, dtype=dtype)


def pad_frames(values: torch.Tensor, multiple: int, value: float) -> torch.Tensor:
    """Right-pad the last (frame) axis to a multiple of `multiple` with a constant."""
    remainder = values.shape[-1] % multiple
    if remainder == 0:
        return values
    return F.pad(values, (0, multiple - remainder), value=value)


class TimestepEmbedder(nn.Module):
    """Sinusoidal step features followed by a two-layer MLP."""

    def __init__(self, hidden: int, frequency_dim: int = 256):
        super().__init__()
        self.frequency_dim = frequency_dim
        self.mlp = nn.Sequential(
            nn.Linear(frequency_dim, hidden),
            nn.SiLU(),
            nn.Linear(hidden, hidden),
        )

    @staticmethod
    def sinusoid(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
        half = dim // 2
        freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
        args = t[:, None].float() * freqs[None]
        emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
        if dim % 2:
            emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
        return emb

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        w = self.mlp[0].weight
        return self.mlp(self.sinusoid(t, self.frequency_dim).to(w.dtype))


class ConditionEncoder(nn.Module):
    """Groups patch_t mel frames per time token and projects them with Linear+GELU stages."""

    def __init__(self, cfg: LseConfig):
        super().__init__()
        self.patch_t = cfg.patch_t
        layers = [nn.Linear(cfg.n_mel * cfg.patch_t, cfg.hidden), nn.GELU()]
        for _ in range(cfg.cond_layers - 1):
            layers += [nn.Linear(cfg.hidden, cfg.hidden), nn.GELU()]
        self.net = nn.Sequential(*layers)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        frames = rearrange(c, "b m (t p) -> b t (p m)", p=self.patch_t)
        return self.net(frames)


class TimeAttention(nn.Module):
    """Multi-head self-attention along time; frequency rows are folded into the batch."""

    def __init__(self, hidden: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(hidden, 3 * hidden)
        self.proj = nn.Linear(hidden, hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n_rows = x.shape[1]
        seq = rearrange(x, "b f t h -> (b f) t h")
        q, k, v = rearrange(self.qkv(seq), "n t (three heads d) -> three n heads t d",
                            three=3, heads=self.n_heads)
        out = F.scaled_dot_product_attention(q, k, v)
        out = self.proj(rearrange(out, "n heads t d -> n t (heads d)"))
        return rearrange(out, "(b f) t h -> b f t h", f=n_rows)


class FrequencyMixer(nn.Module):
    """Learned per-(row, channel) embedding, then a dense map across rows shared over time and channels."""

    def __init__(self, n_rows: int, hidden: int):
        super().__init__()
        self.row_embed = nn.Parameter(torch.zeros(n_rows, hidden))
        self.mix = nn.Linear(n_rows, n_rows)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.row_embed[None, :, None, :]
        return rearrange(self.mix(rearrange(x, "b f t h -> b t h f")), "b t h f -> b f t h")


class LseBlock(nn.Module):
    """adaLN-zero block: time attention + frequency mixing, then a pointwise FFN."""

    def __init__(self, cfg: LseConfig):
        super().__init__()
        hidden = cfg.hidden
        self.norm1 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.attn = TimeAttention(hidden, cfg.n_heads)
        self.freq_mix = FrequencyMixer(cfg.f_tokens, hidden)
        self.norm2 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(
            nn.Linear(hidden, cfg.ffn_expand * hidden),
            nn.GELU(approximate="tanh"),
            nn.Linear(cfg.ffn_expand * hidden, hidden),
        )
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(hidden, 6 * hidden))

    def forward(self, x: torch.Tensor, cond: ConditionEmbedding) -> torch.Tensor:
        shift1, scale1, gate1, shift2, scale2, gate2 = self.adaLN_modulation(cond.fused).chunk(6, dim=-1)
        h = self.freq_mix(self.attn(modulate(self.norm1(x), shift1, scale1)))
        x = x + gate1.unsqueeze(1) * h
        x = x + gate2.unsqueeze(1) * self.mlp(modulate(self.norm2(x), shift2, scale2))
        return x


class FinalLayer(nn.Module):
    def __init__(self, cfg: LseConfig):
        super().__init__()
        self.norm_final = nn.LayerNorm(cfg.hidden, elementwise_affine=False, eps=1e-6)
        self.linear = nn.Linear(cfg.hidden, cfg.patch_f * cfg.patch_t)
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(cfg.hidden, 2 * cfg.hidden))

    def forward(self, x: torch.Tensor, cond: Optional[ConditionEmbedding]) -> torch.Tensor:
        h = self.norm_final(x)
        if cond is not None:
            shift, scale = self.adaLN_modulation(cond.fused).chunk(2, dim=-1)
            h = modulate(h, shift, scale)
        return self.linear(h)


class LseNet(nn.Module):
    """Epsilon predictor: (noisy linear spectrogram, mel condition, step) -> noise estimate.

    Shapes: x [B, n_linear, T], c [B, n_mel, T], t [B]; T must be a multiple of patch_t
    (callers pad with `pad_frames` and crop).
    """

    def __init__(self, cfg: LseConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.x_embedder = nn.Conv2d(1, cfg.hidden, kernel_size=(cfg.patch_f, cfg.patch_t),
                                    stride=(cfg.patch_f, cfg.patch_t))
        self.t_embedder = TimestepEmbedder(cfg.hidden, cfg.timestep_freq_dim)
        self.c_embedder = ConditionEncoder(cfg)
        self.blocks = nn.ModuleList([LseBlock(cfg) for _ in range(cfg.n_blocks)])
        self.final_layer = FinalLayer(cfg)
        self.initialize_weights()

    def initialize_weights(self):
        def _basic_init(module):
            if isinstance(module, nn.Linear):
                nn.init.xavier_uniform_(module.weight)
                if module.bias is not None:
                    nn.init.constant_(module.bias, 0)

        self.apply(_basic_init)
        w = self.x_embedder.weight.data
        nn.init.xavier_uniform_(w.view([w.shape[0], -1]))
        nn.init.constant_(self.x_embedder.bias, 0)
        nn.init.normal_(self.t_embedder.mlp[0].weight, std=0.02)
        nn.init.normal_(self.t_embedder.mlp[2].weight, std=0.02)
        for block in self.blocks:
            nn.init.normal_(block.freq_mix.row_embed, std=0.02)
            with torch.no_grad():
                block.freq_mix.mix.weight.copy_(torch.eye(self.cfg.f_tokens))
            nn.init.constant_(block.freq_mix.mix.bias, 0)
            nn.init.constant_(block.adaLN_modulation[-1].weight, 0)
            nn.init.constant_(block.adaLN_modulation[-1].bias, 0)
        nn.init.constant_(self.final_layer.adaLN_modulation[-1].weight, 0)
        nn.init.constant_(self.final_layer.adaLN_modulation[-1].bias, 0)
        nn.init.constant_(self.final_layer.linear.weight, 0)
        nn.init.constant_(self.final_layer.linear.bias, 0)

    def _check_frames(self, n_frames: int):
        if n_frames < 1 or n_frames % self.cfg.patch_t:
            raise ValueError(f"frame count {n_frames} is not a positive multiple of patch_t={self.cfg.patch_t}")

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        """[B, n_linear, T] -> token grid [B, F_tok, T_tok, hidden]."""
        if x.dim() != 3 or x.shape[1] != self.cfg.n_linear:
            raise ValueError(f"expected [B, {self.cfg.n_linear}, T], got {tuple(x.shape)}")
        self._check_frames(x.shape[-1])
        return rearrange(self.x_embedder(x.unsqueeze(1)), "b h f t -> b f t h")

    def unpatchify(self, grid: torch.Tensor, cond: Optional[ConditionEmbedding] = None) -> torch.Tensor:
        """Token grid [B, F_tok, T_tok, hidden] -> [B, n_linear, T] through the output projection."""
        if grid.dim() != 4 or grid.shape[1] != self.cfg.f_tokens or grid.shape[-1] != self.cfg.hidden:
            raise ValueError(f"expected [B, {self.cfg.f_tokens}, T_tok, {self.cfg.hidden}], got {tuple(grid.shape)}")
        patches = self.final_layer(grid, cond)
        return rearrange(patches, "b f t (pf pt) -> b (f pf) (t pt)", pf=self.cfg.patch_f, pt=self.cfg.patch_t)

    def condition_encode(self, c: torch.Tensor, t: torch.Tensor) -> ConditionEmbedding:
        if c.dim() != 3 or c.shape[1] != self.cfg.n_mel:
            raise ValueError(f"expected mel condition [B, {self.cfg.n_mel}, T], got {tuple(c.shape)}")
        self._check_frames(c.shape[-1])
        return ConditionEmbedding(c_prime=self.c_embedder(c), t_prime=self.t_embedder(t))

    def forward(self, x: torch.Tensor, c: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != c.shape[-1]:
            raise ValueError(f"linear frames {x.shape[-1]} != mel frames {c.shape[-1]}")
        grid = self.patchify(x)
        grid = grid + time_positional_embedding(grid.shape[2], self.cfg.hidden, grid.device, grid.dtype)[None, None]
        cond = self.condition_encode(c, t)
        for block in self.blocks:
            grid = block(grid, cond)
        return self.unpatchify(grid, cond)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
