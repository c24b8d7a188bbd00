"""Desk-scale training loop: corpus sampling, optimization, CSV logging,
and bit-reproducible checkpointing."""

import csv
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .checkpoint import load_container
from .codec import RECONSTRUCTION_TAPS, TAPS, from_tensor, psnr
from .config import ConfigError, TrainConfig
from .losses import (STAGE_LOSS_TAPS, build_color_histogram,
                     reconstruction_loss, stage_loss)
from .model import StyleTransferModel, _pad_to_multiple

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class TrainingDiverged(RuntimeError):
    pass


def discover_corpus(root) -> list:
    root = Path(root)
    paths = sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ConfigError(f"no images found under {root}")
    return paths


class Corpus:
    """Images resized (short edge -> cfg.resize, bilinear, aspect kept)
    and cached; unreadable or undersized files are skipped with a warning."""

    def __init__(self, root, resize: int, crop: int):
        self.images = []
        for path in discover_corpus(root):
            try:
                with PILImage.open(path) as im:
                    im = im.convert("RGB")
                    w, h = im.size
                    scale = resize / min(w, h)
                    im = im.resize((max(1, round(w * scale)),
                                    max(1, round(h * scale))),
                                   PILImage.BILINEAR)
                    arr = np.asarray(im, dtype=np.float32) / 255.0
            except OSError as e:
                log.warning("skipping unreadable image %s: %s", path, e)
                continue
            if min(arr.shape[:2]) < crop:
                log.warning("skipping undersized image %s", path)
                continue
            self.images.append(arr)
        if not self.images:
            raise ConfigError(f"corpus {root} has no usable images")

    def sample_crop(self, rng: np.random.Generator, crop: int) -> np.ndarray:
        arr = self.images[int(rng.integers(len(self.images)))]
        h, w = arr.shape[:2]
        top = int(rng.integers(h - crop + 1))
        left = int(rng.integers(w - crop + 1))
        return arr[top:top + crop, left:left + crop]


def prepare_batch(content: Corpus, style: Corpus, cfg: TrainConfig,
                  rng: np.random.Generator):
    """Batch of independently sampled (content, style) crops as
    (B,3,H,W) float tensors."""
    crops_c = [content.sample_crop(rng, cfg.crop) for _ in range(cfg.batch_size)]
    crops_s = [style.sample_crop(rng, cfg.crop) for _ in range(cfg.batch_size)]
    stack = lambda crops: torch.from_numpy(
        np.stack(crops).transpose(0, 3, 1, 2).copy())
    return stack(crops_c), stack(crops_s)


def _breakdown_columns(stages: int):
    cols = []
    for name in ("l_ss", "l_r", "l_m", "l_h"):
        cols += [f"{name}_{i + 1}" for i in range(stages)]
    return cols + ["l_rec"]


class Trainer:
    def __init__(self, cfg: TrainConfig, out_dir=None):
        torch.set_num_threads(cfg.num_threads)
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.out_dir = Path(out_dir or cfg.out_dir)
        self.model = StyleTransferModel(cfg.profile, stages=cfg.schedule.stages)
        if cfg.profile == "full":
            for p in self.model.encoder.parameters():
                p.requires_grad_(False)
        self.params = [(n, p) for n, p in self.model.named_parameters()
                       if p.requires_grad]
        self.optimizer = torch.optim.Adam(
            [p for _, p in self.params], lr=cfg.learning_rate,
            betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.bad_steps = 0

    # -- one optimization step ----------------------------------------------

    def train_step(self, batch):
        """Forward all stages plus the reconstruction branch, evaluate the
        multistage loss, apply one Adam update; returns the per-term
        breakdown (batch means) with the weighted total."""
        content, style = batch
        schedule = self.cfg.schedule
        encoder = self.model.encoder
        feats_c = encoder(content, taps=TAPS)
        feats_s = encoder(style, taps=TAPS)
        stage_feats = self.model.pipeline(feats_c["relu4_1"], feats_s["relu4_1"])
        stage_images = [self.model.decode_feature(f) for f in stage_feats]
        i_rc = self.model.decode_feature(feats_c["relu4_1"])
        i_rs = self.model.decode_feature(feats_s["relu4_1"])
        # everything is encoded batched, once; losses get per-image slices
        stage_encoded = [encoder(img, taps=STAGE_LOSS_TAPS)
                         for img in stage_images]
        feats_rc = encoder(i_rc, taps=RECONSTRUCTION_TAPS)
        feats_rs = encoder(i_rs, taps=RECONSTRUCTION_TAPS)

        def slice_taps(feats, b, taps):
            return {tap: feats[tap][b] for tap in taps}

        batch_size = content.shape[0]
        total = 0.0
        sums = {}
        for b in range(batch_size):
            style_hist = build_color_histogram(
                style[b], schedule.hist_bins, schedule.hist_falloff)
            loss_b = 0.0
            for i in range(schedule.stages):
                part, terms = stage_loss(
                    i, stage_images[i][b], content[b], style[b], schedule,
                    encoder,
                    content_feats=slice_taps(feats_c, b, STAGE_LOSS_TAPS),
                    style_feats=slice_taps(feats_s, b, STAGE_LOSS_TAPS),
                    stylized_feats=slice_taps(stage_encoded[i], b,
                                              STAGE_LOSS_TAPS),
                    style_hist=style_hist, rng=self.rng)
                loss_b = loss_b + part
                for name, value in terms.items():
                    key = f"{name}_{i + 1}"
                    sums[key] = sums.get(key, 0.0) + value
            l_rec = reconstruction_loss(
                i_rc[b], content[b], i_rs[b], style[b], encoder,
                pixel_weight=schedule.lambda_rec_pixel,
                feats=(slice_taps(feats_rc, b, RECONSTRUCTION_TAPS),
                       slice_taps(feats_c, b, RECONSTRUCTION_TAPS),
                       slice_taps(feats_rs, b, RECONSTRUCTION_TAPS),
                       slice_taps(feats_s, b, RECONSTRUCTION_TAPS)))
            sums["l_rec"] = sums.get("l_rec", 0.0) + l_rec
            total = total + loss_b + l_rec
        total = total / batch_size
        breakdown = {k: float(v.detach()) / batch_size for k, v in sums.items()}
        breakdown["total"] = float(total.detach())

        if not np.isfinite(breakdown["total"]):
            bad = [k for k, v in breakdown.items() if not np.isfinite(v)]
            self.bad_steps += 1
            log.error("non-finite loss at step %d (terms: %s)",
                      self.step + 1, ", ".join(bad))
            if self.bad_steps >= 3:
                raise TrainingDiverged(
                    f"three consecutive non-finite steps; last bad terms: {bad}")
            self.step += 1
            return breakdown
        self.bad_steps = 0

        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.step += 1
        return breakdown

    # -- run loop -------------------------------------------------------------

    def run(self, content_corpus=None, style_corpus=None):
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        content = content_corpus or Corpus(cfg.content_dir, cfg.resize, cfg.crop)
        style = style_corpus or Corpus(cfg.style_dir, cfg.resize, cfg.crop)
        csv_path = self.out_dir / "loss_log.csv"
        columns = ["step"] + _breakdown_columns(cfg.schedule.stages) + ["total"]
        mode = "a" if self.step > 0 and csv_path.exists() else "w"
        with open(csv_path, mode, newline="") as f:
            writer = csv.writer(f)
            if mode == "w":
                writer.writerow(columns)
            if self.step == 0:
                self.save(self.out_dir / "ckpt_initial.npz")
            while self.step < cfg.steps:
                batch = prepare_batch(content, style, cfg, self.rng)
                breakdown = self.train_step(batch)
                writer.writerow([self.step] + [repr(breakdown[c])
                                               for c in columns[1:]])
                if cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / f"ckpt_step{self.step}.npz")
            f.flush()
        self.save(self.out_dir / "model.npz")
        return csv_path

    # -- checkpointing ---------------------------------------------------------

    def save(self, path):
        arrays = {}
        state = self.optimizer.state
        for name, p in self.params:
            s = state.get(p)
            if s:
                arrays[f"optim/{name}/exp_avg"] = s["exp_avg"].numpy().astype(np.float32)
                arrays[f"optim/{name}/exp_avg_sq"] = s["exp_avg_sq"].numpy().astype(np.float32)
                arrays[f"optim/{name}/step"] = np.asarray(float(s["step"]), np.float64)
        meta = {
            "trainer_step": self.step,
            "rng_state": self.rng.bit_generator.state,
        }
        self.model.save(path, extra_arrays=arrays, extra_meta=meta)

    def load(self, path):
        arrays, meta = load_container(path)
        self.model.load_arrays(arrays, meta)
        self.step = int(meta.get("trainer_step", 0))
        if "rng_state" in meta:
            self.rng.bit_generator.state = meta["rng_state"]
        for name, p in self.params:
            key = f"optim/{name}/exp_avg"
            if key in arrays:
                self.optimizer.state[p] = {
                    "step": torch.tensor(float(arrays[f"optim/{name}/step"])),
                    "exp_avg": torch.from_numpy(arrays[key].copy()),
                    "exp_avg_sq": torch.from_numpy(
                        arrays[f"optim/{name}/exp_avg_sq"].copy()),
                }
        return meta


def reconstruction_psnr(model: StyleTransferModel, images) -> float:
    """Mean decode(encode(I)) PSNR in dB over a set of HxWx3 images."""
    from .codec import to_tensor
    values = []
    with torch.no_grad():
        for img in images:
            x, _ = _pad_to_multiple(to_tensor(img), 16)
            feat = model.encoder(x.unsqueeze(0), taps=("relu4_1",))["relu4_1"]
            rec = model.decoder(feat).squeeze(0)
            h, w = img.shape[:2]
            values.append(psnr(img, from_tensor(rec[:, :h, :w])))
    return float(np.mean(values))
