"""Full style-transfer network: encoder -> alignment pipeline -> decoder,
plus checkpoint (de)serialization and padded any-size inference."""

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as functional

from .ama import PamaPipeline
from .checkpoint import (CheckpointIncompatible, load_container,
                         save_container)
from .codec import (PROFILES, Decoder, Encoder, from_tensor, to_tensor)


class StyleTransferModel(nn.Module):
    def __init__(self, profile="tiny", stages: int = 3, dtype=torch.float32):
        super().__init__()
        if isinstance(profile, str):
            profile = PROFILES[profile]
        self.profile = profile
        self.encoder = Encoder(profile)
        self.decoder = Decoder(profile)
        self.pipeline = PamaPipeline(profile.width("relu4_1"), stages=stages)
        self.to(dtype)
        # diagnostics for the training-only-branches contract
        self.decode_calls = 0

    @property
    def stages(self) -> int:
        return self.pipeline.stages

    def decode_feature(self, feature: torch.Tensor) -> torch.Tensor:
        self.decode_calls += 1
        return self.decoder(feature)

    def trainable_parameters(self):
        """Everything except the encoder when the full profile is frozen."""
        params = list(self.decoder.parameters()) + list(self.pipeline.parameters())
        if self.profile.name != "full":
            params += list(self.encoder.parameters())
        return params

    def stylize(self, content: np.ndarray, style: np.ndarray,
                all_stages: bool = False, force_weight=None):
        """Inference path: returns the final stylized image, or all stage
        images when all_stages is set.  Only the consumed stage outputs
        are decoded; the reconstruction branch never runs here."""
        dtype = next(self.parameters()).dtype
        c, c_pad = _pad_to_multiple(to_tensor(content, dtype), 16)
        s, _ = _pad_to_multiple(to_tensor(style, dtype), 16)
        with torch.no_grad():
            f_c = self.encoder(c.unsqueeze(0), taps=("relu4_1",))["relu4_1"]
            f_s = self.encoder(s.unsqueeze(0), taps=("relu4_1",))["relu4_1"]
            feats = self.pipeline(f_c, f_s, force_weight=force_weight)
            if all_stages:
                images = [self.decode_feature(f) for f in feats]
            else:
                images = [self.decode_feature(feats[-1])]
        h, w = content.shape[:2]
        out = [from_tensor(img.squeeze(0)[:, :h, :w]) for img in images]
        return out if all_stages else out[0]

    def inspect(self, content: np.ndarray, style: np.ndarray):
        """Per stage: the decoded rearranged-style feature and the
        interpolation field (numpy H x W in [0,1])."""
        dtype = next(self.parameters()).dtype
        c, _ = _pad_to_multiple(to_tensor(content, dtype), 16)
        s, _ = _pad_to_multiple(to_tensor(style, dtype), 16)
        results = []
        with torch.no_grad():
            x = self.encoder(c.unsqueeze(0), taps=("relu4_1",))["relu4_1"]
            f_s = self.encoder(s.unsqueeze(0), taps=("relu4_1",))["relu4_1"]
            for block in self.pipeline.blocks:
                f_hat = block._rearranged(x, f_s)
                weights = block.space_aware_weights(x, f_hat)
                rearranged_img = from_tensor(self.decode_feature(f_hat).squeeze(0))
                results.append((rearranged_img,
                                weights.squeeze(0).squeeze(0).cpu().numpy()))
                x = block(x, f_s)
        return results

    # -- checkpointing ------------------------------------------------------

    def state_arrays(self) -> dict:
        return {f"model/{k}": v.detach().cpu().numpy().astype(np.float32)
                for k, v in self.state_dict().items()}

    def meta(self) -> dict:
        return {"profile": self.profile.name, "stages": self.stages}

    def save(self, path, extra_arrays=None, extra_meta=None) -> None:
        arrays = self.state_arrays()
        if extra_arrays:
            arrays.update(extra_arrays)
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        save_container(path, arrays, meta)

    def load_arrays(self, arrays: dict, meta: dict) -> None:
        if meta.get("profile") != self.profile.name:
            raise CheckpointIncompatible(
                f"checkpoint profile {meta.get('profile')!r} does not match "
                f"model profile {self.profile.name!r}")
        if meta.get("stages") != self.stages:
            raise CheckpointIncompatible(
                f"checkpoint has {meta.get('stages')} stages, model has "
                f"{self.stages}")
        dtype = next(self.parameters()).dtype
        state = {k[len("model/"):]: torch.as_tensor(v, dtype=dtype)
                 for k, v in arrays.items() if k.startswith("model/")}
        self.load_state_dict(state)


def load_model(path, dtype=torch.float32):
    arrays, meta = load_container(path)
    if "profile" not in meta or meta["profile"] not in PROFILES:
        raise CheckpointIncompatible(
            f"checkpoint names unknown profile {meta.get('profile')!r}")
    model = StyleTransferModel(meta["profile"], stages=meta.get("stages", 3),
                               dtype=dtype)
    model.load_arrays(arrays, meta)
    model.eval()
    return model, meta


def _pad_to_multiple(x: torch.Tensor, multiple: int):
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (0, 0)
    return functional.pad(x.unsqueeze(0), (0, pw, 0, ph),
                          mode="reflect").squeeze(0), (ph, pw)
