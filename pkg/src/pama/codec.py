"""VGG-style encoder/decoder pair, feature normalization, image I/O."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from PIL import Image as PILImage

TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")

# cumulative downsampling factor in front of each tap
TAP_STRIDE = {"relu1_1": 1, "relu2_1": 2, "relu3_1": 4, "relu4_1": 8,
              "relu5_1": 16}

# minimum input edge so the deepest requested tap has at least one cell
TAP_MIN_INPUT = {"relu1_1": 1, "relu2_1": 2, "relu3_1": 4, "relu4_1": 8,
                 "relu5_1": 16}

RECONSTRUCTION_TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")


class ShapeError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class CodecProfile:
    name: str
    widths: tuple  # channel width at each tap, relu1_1..relu5_1

    def width(self, tap: str) -> int:
        return self.widths[TAPS.index(tap)]


PROFILES = {
    "full": CodecProfile("full", (64, 128, 256, 512, 512)),
    "tiny": CodecProfile("tiny", (16, 32, 64, 128, 128)),
}


@dataclass
class FeatureMap:
    data: torch.Tensor  # (C, H, W) or (B, C, H, W)
    tap: str

    @property
    def channels(self) -> int:
        return self.data.shape[-3]


def _conv(cin, cout):
    # reflection padding keeps borders halo-free
    return nn.Conv2d(cin, cout, 3, padding=1, padding_mode="reflect")


class Encoder(nn.Module):
    """VGG19-shaped trunk up to relu5_1, taps after each block's first relu."""

    def __init__(self, profile: CodecProfile):
        super().__init__()
        w1, w2, w3, w4, w5 = profile.widths
        self.profile_name = profile.name
        relu = nn.ReLU(inplace=False)
        pool = nn.MaxPool2d(2, 2)
        self.to_relu1_1 = nn.Sequential(_conv(3, w1), relu)
        self.to_relu2_1 = nn.Sequential(_conv(w1, w1), relu, pool,
                                        _conv(w1, w2), relu)
        self.to_relu3_1 = nn.Sequential(_conv(w2, w2), relu, pool,
                                        _conv(w2, w3), relu)
        self.to_relu4_1 = nn.Sequential(_conv(w3, w3), relu, _conv(w3, w3),
                                        relu, _conv(w3, w3), relu, pool,
                                        _conv(w3, w4), relu)
        self.to_relu5_1 = nn.Sequential(_conv(w4, w4), relu, _conv(w4, w4),
                                        relu, _conv(w4, w4), relu, pool,
                                        _conv(w4, w5), relu)
        self._stages = (self.to_relu1_1, self.to_relu2_1, self.to_relu3_1,
                        self.to_relu4_1, self.to_relu5_1)

    def forward(self, x: torch.Tensor, taps=TAPS) -> dict:
        deepest = max(taps, key=TAPS.index)
        h, w = x.shape[-2:]
        need = TAP_MIN_INPUT[deepest]
        if h < need or w < need:
            raise DimensionError(
                f"input {h}x{w} too small for tap {deepest} "
                f"(needs >= {need}px per edge)")
        out = {}
        for tap, stage in zip(TAPS, self._stages):
            x = stage(x)
            if tap in taps:
                out[tap] = x
            if tap == deepest:
                break
        return out


def _up():
    return nn.Upsample(scale_factor=2, mode="nearest")


class Decoder(nn.Module):
    """Mirror of the encoder from relu4_1 back to pixels (8x upsampling)."""

    def __init__(self, profile: CodecProfile):
        super().__init__()
        w1, w2, w3, w4, _ = profile.widths
        self.profile_name = profile.name
        relu = nn.ReLU(inplace=False)
        self.net = nn.Sequential(
            _conv(w4, w3), relu, _up(),
            _conv(w3, w3), relu, _conv(w3, w3), relu, _conv(w3, w3), relu,
            _conv(w3, w2), relu, _up(),
            _conv(w2, w2), relu,
            _conv(w2, w1), relu, _up(),
            _conv(w1, w1), relu,
            _conv(w1, 3),
        )

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return self.net(feature)


def mean_variance_normalize(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Zero-mean unit-variance per channel over the spatial axes."""
    spatial = x.flatten(-2)
    if spatial.shape[-1] < 2:
        raise DimensionError("normalization needs >= 2 spatial positions")
    mean = spatial.mean(-1)[..., None, None]
    var = spatial.var(-1, unbiased=False)[..., None, None]
    return (x - mean) / torch.sqrt(var + eps)


class Codec(nn.Module):
    """Encoder/decoder pair for one architecture profile.

    Pure given frozen weights; encode/decode are safe to call concurrently.
    """

    def __init__(self, profile, dtype=torch.float32):
        super().__init__()
        if isinstance(profile, str):
            profile = PROFILES[profile]
        self.profile = profile
        self.encoder = Encoder(profile).to(dtype)
        self.decoder = Decoder(profile).to(dtype)

    def encode(self, image: np.ndarray, taps=TAPS) -> dict:
        """Encode an HxWx3 [0,1] image into tagged feature maps."""
        x = to_tensor(image, dtype=next(self.encoder.parameters()).dtype)
        with torch.no_grad():
            feats = self.encoder(x.unsqueeze(0), taps=taps)
        return {tap: FeatureMap(t.squeeze(0), tap) for tap, t in feats.items()}

    def decode(self, feature: FeatureMap) -> np.ndarray:
        """Decode a relu4_1 feature map back into an HxWx3 [0,1] image."""
        if feature.tap != "relu4_1":
            raise ShapeError(f"decoder expects tap relu4_1, got {feature.tap}")
        want = self.profile.width("relu4_1")
        if feature.channels != want:
            raise ShapeError(
                f"profile {self.profile.name!r} expects {want} channels at "
                f"relu4_1, got {feature.channels}")
        x = feature.data
        if x.dim() == 3:
            x = x.unsqueeze(0)
        with torch.no_grad():
            img = self.decoder(x.to(next(self.decoder.parameters()).dtype))
        return from_tensor(img.squeeze(0))


# ---------------------------------------------------------------------------
# image I/O: 8-bit sRGB files <-> float arrays in [0,1]

def load_image(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    data = np.rint(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path)


def to_tensor(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """HxWx3 array -> 3xHxW tensor."""
    return torch.as_tensor(np.asarray(image), dtype=dtype).permute(2, 0, 1)


def from_tensor(x: torch.Tensor) -> np.ndarray:
    """3xHxW tensor -> HxWx3 array clamped to [0,1]."""
    return x.detach().clamp(0, 1).permute(1, 2, 0).cpu().numpy()


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return -10.0 * np.log10(mse)
