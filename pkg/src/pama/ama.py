"""Attentional manifold alignment: attention rearrangement plus
space-aware interpolation, chained into a progressive pipeline."""

import torch
import torch.nn as nn

from .codec import ShapeError, mean_variance_normalize


class ContractViolation(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


# Attention matrices above this element count are computed in row blocks.
DEFAULT_ATTENTION_BUDGET = 2 ** 22


def interpolate(f_c: torch.Tensor, f_hat_s: torch.Tensor,
                weights: torch.Tensor) -> torch.Tensor:
    """Convex per-position blend: W*F_c + (1-W)*F_hat_s, W broadcast over C."""
    if f_c.shape != f_hat_s.shape:
        raise ShapeError(f"feature shapes differ: {tuple(f_c.shape)} vs "
                         f"{tuple(f_hat_s.shape)}")
    if weights.shape[-2:] != f_c.shape[-2:]:
        raise ShapeError("interpolation field does not match feature grid")
    with torch.no_grad():
        wmin, wmax = float(weights.min()), float(weights.max())
    if wmin < 0.0 or wmax > 1.0:
        raise ContractViolation(
            f"interpolation weights outside [0,1]: [{wmin}, {wmax}]")
    if weights.dim() == f_c.dim() - 1:
        weights = weights.unsqueeze(-3)
    return weights * f_c + (1.0 - weights) * f_hat_s


class AmaBlock(nn.Module):
    """One alignment stage: attention map, style rearrangement, and a
    learned scalar field that interpolates content with rearranged style.

    All four embeddings (f, g, h, theta) are width-preserving 1x1
    convolutions; the channel-dense stack uses 3x3/5x5/7x7 kernels whose
    averaged response is squashed through a logistic to keep the
    interpolation field in [0,1].
    """

    def __init__(self, channels: int, dense_kernel_sizes=(3, 5, 7),
                 attention_budget: int = DEFAULT_ATTENTION_BUDGET):
        super().__init__()
        self.channels = channels
        self.attention_budget = attention_budget
        self.embed_query = nn.Conv2d(channels, channels, 1)
        self.embed_key = nn.Conv2d(channels, channels, 1)
        self.embed_value = nn.Conv2d(channels, channels, 1)
        self.embed_out = nn.Conv2d(channels, channels, 1)
        # zero padding: reflection would reject feature grids smaller than
        # the 7x7 kernel's pad, which 16px inputs legitimately produce
        self.dense = nn.ModuleList(
            nn.Conv2d(2 * channels, 1, k, padding=k // 2)
            for k in dense_kernel_sizes)

    def _check_channels(self, f_c, f_s):
        if f_c.shape[-3] != self.channels or f_s.shape[-3] != self.channels:
            raise ShapeError(
                f"block expects {self.channels} channels, got content "
                f"{f_c.shape[-3]} / style {f_s.shape[-3]}")

    def attention_map(self, f_c: torch.Tensor, f_s: torch.Tensor) -> torch.Tensor:
        """Row-stochastic (B, HcWc, HsWs) similarity matrix between
        embedded, mean-variance-normalized feature positions."""
        f_c, f_s = _batched(f_c), _batched(f_s)
        self._check_channels(f_c, f_s)
        q = self.embed_query(mean_variance_normalize(f_c)).flatten(2)  # B,C,Nc
        k = self.embed_key(mean_variance_normalize(f_s)).flatten(2)    # B,C,Ns
        logits = torch.bmm(q.transpose(1, 2), k)
        return torch.softmax(logits, dim=2)

    def rearrange_style(self, f_s: torch.Tensor, attention: torch.Tensor,
                        grid_hw=None) -> torch.Tensor:
        """Redistribute embedded style features onto the content grid."""
        f_s = _batched(f_s)
        attention = attention if attention.dim() == 3 else attention.unsqueeze(0)
        hs, ws = f_s.shape[-2:]
        if attention.shape[-1] != hs * ws:
            raise ShapeError(
                f"attention has {attention.shape[-1]} style columns but the "
                f"style map has {hs * ws} positions")
        if grid_hw is None:
            n_c = attention.shape[-2]
            side = int(round(n_c ** 0.5))
            if side * side != n_c:
                raise ShapeError("content grid shape required for non-square "
                                 "position counts")
            grid_hw = (side, side)
        v = self.embed_value(f_s).flatten(2)                   # B,C,Ns
        mixed = torch.bmm(attention, v.transpose(1, 2))        # B,Nc,C
        b = mixed.shape[0]
        mixed = mixed.transpose(1, 2).reshape(b, self.channels, *grid_hw)
        return self.embed_out(mixed)

    def space_aware_weights(self, f_c: torch.Tensor,
                            f_hat_s: torch.Tensor) -> torch.Tensor:
        """Logistic-squashed average of the channel-dense kernels, (B,1,H,W)."""
        f_c, f_hat_s = _batched(f_c), _batched(f_hat_s)
        if f_c.shape != f_hat_s.shape:
            raise ShapeError(f"shape mismatch {tuple(f_c.shape)} vs "
                             f"{tuple(f_hat_s.shape)}")
        stacked = torch.cat([f_c, f_hat_s], dim=1)
        pre = sum(conv(stacked) for conv in self.dense) / len(self.dense)
        return torch.sigmoid(pre)

    def _rearranged(self, f_c, f_s):
        """Attention + rearrangement, in row blocks when the attention
        matrix would exceed the memory budget (results unchanged)."""
        f_c, f_s = _batched(f_c), _batched(f_s)
        self._check_channels(f_c, f_s)
        hc, wc = f_c.shape[-2:]
        n_c, n_s = hc * wc, f_s.shape[-2] * f_s.shape[-1]
        if n_c * n_s <= self.attention_budget:
            attention = self.attention_map(f_c, f_s)
            return self.rearrange_style(f_s, attention, grid_hw=(hc, wc))
        q = self.embed_query(mean_variance_normalize(f_c)).flatten(2)
        k = self.embed_key(mean_variance_normalize(f_s)).flatten(2)
        v = self.embed_value(f_s).flatten(2)
        rows_per_block = max(1, self.attention_budget // n_s)
        parts = []
        for start in range(0, n_c, rows_per_block):
            q_blk = q[:, :, start:start + rows_per_block]
            attn = torch.softmax(torch.bmm(q_blk.transpose(1, 2), k), dim=2)
            parts.append(torch.bmm(attn, v.transpose(1, 2)))
        mixed = torch.cat(parts, dim=1).transpose(1, 2)
        mixed = mixed.reshape(f_c.shape[0], self.channels, hc, wc)
        return self.embed_out(mixed)

    def forward(self, f_c: torch.Tensor, f_s: torch.Tensor,
                force_weight=None) -> torch.Tensor:
        f_hat_s = self._rearranged(f_c, f_s)
        f_c = _batched(f_c)
        if force_weight is None:
            weights = self.space_aware_weights(f_c, f_hat_s)
        else:
            weights = torch.full_like(f_c[:, :1], float(force_weight))
        return interpolate(f_c, f_hat_s, weights)


class PamaPipeline(nn.Module):
    """Chain of independent alignment blocks; each stage consumes the
    previous stage's output as content and the original style features."""

    def __init__(self, channels: int, stages: int = 3,
                 attention_budget: int = DEFAULT_ATTENTION_BUDGET):
        super().__init__()
        if stages < 1:
            raise ConfigurationError("pipeline needs at least one stage")
        self.blocks = nn.ModuleList(
            AmaBlock(channels, attention_budget=attention_budget)
            for _ in range(stages))

    @property
    def stages(self) -> int:
        return len(self.blocks)

    def forward(self, f_c: torch.Tensor, f_s: torch.Tensor,
                force_weight=None) -> list:
        """Feature after every stage, in order.  Training decodes them
        all; inference only consumes the last entry."""
        outputs = []
        x = _batched(f_c)
        f_s = _batched(f_s)
        for block in self.blocks:
            x = block(x, f_s, force_weight=force_weight)
            outputs.append(x)
        return outputs


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x if x.dim() == 4 else x.unsqueeze(0)
