"""Differentiable loss suite: self-similarity, relaxed earth mover
distance, moment matching, color histogram, reconstruction, and the
weighted multistage aggregation."""

import numpy as np
import torch

from .codec import RECONSTRUCTION_TAPS, ShapeError
from .config import ConfigError, StageSchedule

COS_EPS = 1e-8
HIST_INTENSITY_FLOOR = 1e-6
HIST_RANGE = 3.0

# taps feeding the per-stage feature losses
STAGE_LOSS_TAPS = ("relu3_1", "relu4_1", "relu5_1")


class DegenerateInputError(ValueError):
    pass


def _vectors(x: torch.Tensor) -> torch.Tensor:
    """(C,H,W) or (C,N) -> (C,N)."""
    return x.reshape(x.shape[0], -1)


def cosine_distance_matrix(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Pairwise 1 - cos(x_i, y_j) over position vectors; (P, Q), entries
    in [0, 2]."""
    x, y = _vectors(x), _vectors(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"channel mismatch: {x.shape[0]} vs {y.shape[0]}")
    xn = x / (x.norm(dim=0, keepdim=True) + COS_EPS)
    yn = y / (y.norm(dim=0, keepdim=True) + COS_EPS)
    return 1.0 - xn.t() @ yn


def subsample_positions(n: int, limit: int, rng: np.random.Generator):
    """Uniform position subset (or None for all) for quadratic-cost losses."""
    if limit is None or n <= limit:
        return None
    return torch.as_tensor(rng.choice(n, size=limit, replace=False))


def _maybe_subsample(x: torch.Tensor, idx) -> torch.Tensor:
    return x if idx is None else x[:, idx]


def self_similarity_loss(f_c: torch.Tensor, f_cs: torch.Tensor, *,
                         limit=None, rng=None,
                         column_normalize_content: bool = False) -> torch.Tensor:
    """Structure-preservation loss: mean absolute gap between the
    normalized self-distance matrices of the two maps, summed over entries
    and divided by the position count.

    Both matrices are row-normalized by default; the column-normalized
    content variant is kept behind a flag.
    """
    f_c, f_cs = _vectors(f_c), _vectors(f_cs)
    if f_c.shape[1] != f_cs.shape[1]:
        raise ShapeError("content and stylized maps must share positions")
    if f_c.shape[1] < 2:
        raise DegenerateInputError("self-similarity needs >= 2 positions")
    if limit is not None and f_c.shape[1] > limit:
        if rng is None:
            raise ValueError("subsampling requires an rng handle")
        idx = subsample_positions(f_c.shape[1], limit, rng)
        f_c, f_cs = f_c[:, idx], f_cs[:, idx]
    d_c = cosine_distance_matrix(f_c, f_c)
    d_cs = cosine_distance_matrix(f_cs, f_cs)
    if column_normalize_content:
        d_c = d_c / (d_c.sum(dim=0, keepdim=True) + COS_EPS)
    else:
        d_c = d_c / (d_c.sum(dim=1, keepdim=True) + COS_EPS)
    d_cs = d_cs / (d_cs.sum(dim=1, keepdim=True) + COS_EPS)
    return (d_c - d_cs).abs().sum() / f_c.shape[1]


def remd_loss(f_cs: torch.Tensor, f_s: torch.Tensor, *,
              limit=None, rng=None) -> torch.Tensor:
    """Relaxed earth mover distance over the cosine cost matrix: the worse
    of the two one-sided mean nearest-neighbor costs."""
    f_cs, f_s = _vectors(f_cs), _vectors(f_s)
    if limit is not None and rng is not None:
        f_cs = _maybe_subsample(f_cs, subsample_positions(f_cs.shape[1], limit, rng))
        f_s = _maybe_subsample(f_s, subsample_positions(f_s.shape[1], limit, rng))
    cost = cosine_distance_matrix(f_cs, f_s)
    over_stylized = cost.min(dim=0).values.mean()  # per style point
    over_style = cost.min(dim=1).values.mean()     # per stylized point
    return torch.maximum(over_stylized, over_style)


def moment_loss(f_cs: torch.Tensor, f_s: torch.Tensor, *,
                limit=None, rng=None) -> torch.Tensor:
    """L1 gap between means and (population) covariances of the two
    feature distributions."""
    f_cs, f_s = _vectors(f_cs), _vectors(f_s)
    if limit is not None and rng is not None:
        f_cs = _maybe_subsample(f_cs, subsample_positions(f_cs.shape[1], limit, rng))
        f_s = _maybe_subsample(f_s, subsample_positions(f_s.shape[1], limit, rng))
    mu_cs = f_cs.mean(dim=1, keepdim=True)
    mu_s = f_s.mean(dim=1, keepdim=True)
    c_cs = f_cs - mu_cs
    c_s = f_s - mu_s
    cov_cs = c_cs @ c_cs.t() / f_cs.shape[1]
    cov_s = c_s @ c_s.t() / f_s.shape[1]
    return (mu_cs - mu_s).abs().sum() + (cov_cs - cov_s).abs().sum()


# ---------------------------------------------------------------------------
# differentiable color histogram in log-chroma coordinates


def log_chroma(image: torch.Tensor) -> torch.Tensor:
    """Per-channel log-ratio coordinates, (3, 2, Npix).

    Projection k maps a pixel to (log I_k - log I_{k+1}, log I_k - log
    I_{k+2}), cyclic in the channels; intensities are floored so black
    pixels stay defined.
    """
    flat = image.reshape(3, -1).clamp(min=HIST_INTENSITY_FLOOR).log()
    coords = []
    for k in range(3):
        u = flat[k] - flat[(k + 1) % 3]
        v = flat[k] - flat[(k + 2) % 3]
        coords.append(torch.stack([u, v]))
    return torch.stack(coords)


def histogram_bin_centers(bins: int, dtype=torch.float32) -> torch.Tensor:
    return torch.linspace(-HIST_RANGE, HIST_RANGE, bins, dtype=dtype)


def build_color_histogram(image: torch.Tensor, bins: int = 64,
                          falloff: float = 0.02) -> torch.Tensor:
    """Soft-assignment color histogram, (3, bins, bins), summing to 1.

    Each pixel's log-chroma coordinates are spread over the bin grid with
    a separable inverse-quadratic kernel of width `falloff`.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if falloff <= 0:
        raise ValueError("falloff must be > 0")
    coords = log_chroma(image)
    centers = histogram_bin_centers(bins, dtype=image.dtype)
    hists = []
    for k in range(3):
        du = coords[k, 0][:, None] - centers[None, :]
        dv = coords[k, 1][:, None] - centers[None, :]
        wu = 1.0 / (1.0 + (du / falloff) ** 2)
        wv = 1.0 / (1.0 + (dv / falloff) ** 2)
        hists.append(wu.t() @ wv)
    hist = torch.stack(hists)
    return hist / hist.sum()


def histogram_loss(h_s: torch.Tensor, h_cs: torch.Tensor) -> torch.Tensor:
    """Hellinger distance between normalized histograms; in [0, 1]."""
    h_s = torch.as_tensor(h_s)
    h_cs = torch.as_tensor(h_cs)
    if h_s.shape != h_cs.shape:
        raise ShapeError(f"histogram shapes differ: {tuple(h_s.shape)} vs "
                         f"{tuple(h_cs.shape)}")
    diff = h_s.clamp(min=0).sqrt() - h_cs.clamp(min=0).sqrt()
    return diff.norm() / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# reconstruction and multistage aggregation


def reconstruction_loss(i_rc: torch.Tensor, i_c: torch.Tensor,
                        i_rs: torch.Tensor, i_s: torch.Tensor,
                        encoder, taps=RECONSTRUCTION_TAPS,
                        pixel_weight: float = 50.0, *,
                        feats=None) -> torch.Tensor:
    """Pixel L2 norms (weighted) plus feature L2 norms over the given taps
    for both reconstructed pairs.

    `feats` may carry precomputed encodings as a 4-tuple of tap->tensor
    dicts (rc, c, rs, s) to avoid re-encoding inside a training step.
    """
    for a, b in ((i_rc, i_c), (i_rs, i_s)):
        if a.shape != b.shape:
            raise ShapeError(f"image shapes differ: {tuple(a.shape)} vs "
                             f"{tuple(b.shape)}")
    loss = pixel_weight * ((i_rc - i_c).norm() + (i_rs - i_s).norm())
    if feats is None:
        feats = (encoder(_batched(i_rc), taps=taps),
                 encoder(_batched(i_c), taps=taps),
                 encoder(_batched(i_rs), taps=taps),
                 encoder(_batched(i_s), taps=taps))
    f_rc, f_c, f_rs, f_s = feats
    for tap in taps:
        loss = loss + (f_rc[tap] - f_c[tap]).norm() + (f_rs[tap] - f_s[tap]).norm()
    return loss


def _batched(x):
    return x if x.dim() == 4 else x.unsqueeze(0)


def stage_loss(stage_index: int, stage_image: torch.Tensor,
               i_c: torch.Tensor, i_s: torch.Tensor,
               schedule: StageSchedule, encoder, *,
               content_feats=None, style_feats=None, style_hist=None,
               stylized_feats=None, rng=None):
    """Weighted per-stage loss for one decoded stage image.

    The stage image is re-encoded; self-similarity, REMD, and moment terms
    are summed over relu3_1/relu4_1/relu5_1 and combined with weights
    normalized by their sum, the histogram term enters with its raw
    weight.  Returns (scalar, term breakdown).
    """
    if not 0 <= stage_index < schedule.stages:
        raise ConfigError(f"stage index {stage_index} outside schedule "
                          f"(stages={schedule.stages})")
    f_cs = stylized_feats
    if f_cs is None:
        f_cs = encoder(_batched(stage_image), taps=STAGE_LOSS_TAPS)
    if content_feats is None:
        content_feats = encoder(_batched(i_c), taps=STAGE_LOSS_TAPS)
    if style_feats is None:
        style_feats = encoder(_batched(i_s), taps=STAGE_LOSS_TAPS)
    limit = schedule.subsample_limit
    l_ss = l_r = l_m = 0.0
    for tap in STAGE_LOSS_TAPS:
        cs = f_cs[tap].squeeze(0)
        l_ss = l_ss + self_similarity_loss(
            content_feats[tap].squeeze(0), cs, limit=limit, rng=rng,
            column_normalize_content=schedule.ss_column_normalize_content)
        l_r = l_r + remd_loss(cs, style_feats[tap].squeeze(0),
                              limit=limit, rng=rng)
        l_m = l_m + moment_loss(cs, style_feats[tap].squeeze(0),
                                limit=limit, rng=rng)
    if style_hist is None:
        style_hist = build_color_histogram(
            i_s, schedule.hist_bins, schedule.hist_falloff)
    stage_hist = build_color_histogram(
        stage_image, schedule.hist_bins, schedule.hist_falloff)
    l_h = histogram_loss(style_hist, stage_hist)
    w_ss, w_r, w_m = schedule.feature_weights(stage_index)
    total = (w_ss * l_ss + w_r * l_r + w_m * l_m
             + schedule.lambda_h[stage_index] * l_h)
    breakdown = {"l_ss": l_ss, "l_r": l_r, "l_m": l_m, "l_h": l_h}
    return total, breakdown


def total_loss(stage_images, i_c: torch.Tensor, i_s: torch.Tensor,
               i_rc: torch.Tensor, i_rs: torch.Tensor,
               schedule: StageSchedule, encoder, *, rng=None):
    """Sum of stage losses plus the reconstruction term.

    Returns (scalar, breakdown) where the breakdown maps term names
    (l_ss_1.., l_r_1.., l_m_1.., l_h_1.., l_rec) to scalar tensors.
    """
    if len(stage_images) != schedule.stages:
        raise ConfigError(f"expected {schedule.stages} stage images, got "
                          f"{len(stage_images)}")
    content_feats = encoder(_batched(i_c), taps=STAGE_LOSS_TAPS)
    style_feats = encoder(_batched(i_s), taps=STAGE_LOSS_TAPS)
    style_hist = build_color_histogram(i_s, schedule.hist_bins,
                                       schedule.hist_falloff)
    total = 0.0
    breakdown = {}
    for i, img in enumerate(stage_images):
        part, terms = stage_loss(i, img, i_c, i_s, schedule, encoder,
                                 content_feats=content_feats,
                                 style_feats=style_feats,
                                 style_hist=style_hist, rng=rng)
        total = total + part
        for name, value in terms.items():
            breakdown[f"{name}_{i + 1}"] = value
    l_rec = reconstruction_loss(i_rc, i_c, i_rs, i_s, encoder,
                                pixel_weight=schedule.lambda_rec_pixel)
    breakdown["l_rec"] = l_rec
    total = total + l_rec
    return total, breakdown
