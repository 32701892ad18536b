"""Embedding backends, selected by string id.

Synthetic backends (``mean-pixel``, ``rms-bands``) are pure functions of clip
content and need no weights. Reference backends wrap pretrained encoders and
fail loudly when their weights are not available locally.

A dimension suffix selects the output size of synthetic backends, e.g.
``mean-pixel@96``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from ..errors import BackendUnavailableError

DEFAULT_SYNTHETIC_DIM = 384


@dataclass(frozen=True)
class EmbeddingBackendSpec:
    backend_id: str
    stream: str  # "visual" | "audio"
    dim: int
    deterministic: bool = True


class MeanPixelBackend:
    """Clip-mean image pooled into vertical colour bands.

    The mean frame of the clip is area-resized to ``dim // 3`` columns of one
    row; the three colour channels of every band give ``dim`` values in [0, 1].
    """

    def __init__(self, dim: int = DEFAULT_SYNTHETIC_DIM):
        if dim % 3:
            raise ValueError("mean-pixel dim must be a multiple of 3")
        self.spec = EmbeddingBackendSpec(f"mean-pixel@{dim}", "visual", dim)

    def embed_frame(self, frame: np.ndarray) -> np.ndarray:
        img = frame.astype(np.float32) / 255.0
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        bands = cv2.resize(img, (self.spec.dim // 3, 1), interpolation=cv2.INTER_AREA)
        return bands.reshape(-1).astype(np.float32)

    def embed_clip(self, frames: list[np.ndarray]) -> np.ndarray:
        mean = np.mean(np.stack([f.astype(np.float32) for f in frames]), axis=0)
        return self.embed_frame(mean)


class RmsBandsBackend:
    """Log-compressed RMS of the span band-passed into ``dim`` equal-width frequency bands.

    Each band RMS r maps to log1p(r / ref) / log1p(1 / ref) with ref = 1e-3,
    so silence is exactly 0 and a full-scale band is about 1.
    """

    ref = 1e-3

    def __init__(self, dim: int = DEFAULT_SYNTHETIC_DIM):
        self.spec = EmbeddingBackendSpec(f"rms-bands@{dim}", "audio", dim)

    def embed_span(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        x = np.asarray(samples, dtype=np.float64)
        if x.size == 0:
            return np.zeros(self.spec.dim, dtype=np.float32)
        power = np.abs(np.fft.rfft(x)) ** 2 / x.size ** 2
        # one-sided spectrum: every bin except DC (and Nyquist for even n) stands for two
        power[1:(x.size + 1) // 2] *= 2
        edges = np.linspace(0, power.size, self.spec.dim + 1).astype(int)
        rms = np.array([np.sqrt(power[a:b].sum()) if b > a else 0.0
                        for a, b in zip(edges[:-1], edges[1:])])
        return (np.log1p(rms / self.ref) / np.log1p(1 / self.ref)).astype(np.float32)

    def band_rms(self, samples: np.ndarray) -> np.ndarray:
        """Uncompressed band RMS values (inverse of the log mapping)."""
        v = self.embed_span(samples, 0).astype(np.float64)
        return np.expm1(v * np.log1p(1 / self.ref)) * self.ref


# --------------------------------------------------------------------------
# reference backends


def _hub_checkpoint(url: str) -> Path:
    """Local path of a torch hub checkpoint; never downloads."""
    import torch

    path = Path(torch.hub.get_dir()) / "checkpoints" / os.path.basename(url)
    if not path.exists():
        raise BackendUnavailableError(
            f"pretrained weights not found at {path}; download {url} there first"
        )
    return path


_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)
_KINETICS_MEAN = np.array([0.43216, 0.394666, 0.37645], dtype=np.float32)
_KINETICS_STD = np.array([0.22803, 0.22145, 0.216989], dtype=np.float32)


def _to_rgb_tensor(frames, size, mean, std):
    import torch

    out = []
    for f in frames:
        rgb = cv2.cvtColor(f, cv2.COLOR_BGR2RGB) if f.ndim == 3 else cv2.cvtColor(f, cv2.COLOR_GRAY2RGB)
        rgb = cv2.resize(rgb, size, interpolation=cv2.INTER_LINEAR).astype(np.float32) / 255.0
        out.append((rgb - mean) / std)
    return torch.from_numpy(np.stack(out)).permute(0, 3, 1, 2)  # N, C, H, W


class Swin3DBackend:
    """Video Swin-B (Kinetics-400) with the classifier removed; 1024-d pooled output.

    The clip goes through the encoder's own pooling (global average over the
    final spatio-temporal tokens), which is what ``backend_id`` records.
    """

    url = "https://download.pytorch.org/models/swin3d_b_1k-24f7c7c6.pth"

    def __init__(self, pretrained: bool = True):
        try:
            import torch
            from torchvision.models.video import swin3d_b
        except ImportError as exc:
            raise BackendUnavailableError(f"swin3d_b needs torchvision: {exc}") from exc
        model = swin3d_b(weights=None)
        if pretrained:
            model.load_state_dict(torch.load(_hub_checkpoint(self.url), map_location="cpu"))
        model.head = torch.nn.Identity()
        self.model = model.eval()
        tag = "k400" if pretrained else "untrained"
        self.spec = EmbeddingBackendSpec(f"swin3d_b-{tag}-avgpool", "visual", 1024)

    def embed_clip(self, frames):
        import torch

        x = _to_rgb_tensor(frames, (224, 224), _KINETICS_MEAN, _KINETICS_STD)
        x = x.permute(1, 0, 2, 3).unsqueeze(0)  # 1, C, T, H, W
        with torch.no_grad():
            return self.model(x)[0].numpy().astype(np.float32)


class GoogLeNetFrameBackend:
    """GoogLeNet pool5 (1024-d) per frame, for the frame-level baseline."""

    url = "https://download.pytorch.org/models/googlenet-1378be20.pth"

    def __init__(self, pretrained: bool = True):
        try:
            import torch
            from torchvision.models import googlenet
        except ImportError as exc:
            raise BackendUnavailableError(f"googlenet needs torchvision: {exc}") from exc
        model = googlenet(weights=None, aux_logits=False, init_weights=not pretrained)
        if pretrained:
            state = torch.load(_hub_checkpoint(self.url), map_location="cpu")
            state = {k: v for k, v in state.items() if not k.startswith("aux")}
            model.load_state_dict(state)
        model.fc = torch.nn.Identity()
        model.dropout = torch.nn.Identity()
        self.model = model.eval()
        tag = "imagenet" if pretrained else "untrained"
        self.spec = EmbeddingBackendSpec(f"googlenet-{tag}-pool5", "visual", 1024)

    def embed_frame(self, frame):
        import torch

        x = _to_rgb_tensor([frame], (224, 224), _IMAGENET_MEAN, _IMAGENET_STD)
        with torch.no_grad():
            return self.model(x)[0].numpy().astype(np.float32)

    def embed_clip(self, frames):
        return np.mean([self.embed_frame(f) for f in frames], axis=0)


class W2VBertBackend:
    """Wav2Vec2-BERT 2.0 encoder, mean of the last hidden state (1024-d)."""

    model_name = "facebook/w2v-bert-2.0"

    def __init__(self):
        try:
            from transformers import AutoFeatureExtractor, Wav2Vec2BertModel
        except ImportError as exc:
            raise BackendUnavailableError(f"w2v-bert-2.0 needs transformers: {exc}") from exc
        try:
            self.extractor = AutoFeatureExtractor.from_pretrained(self.model_name, local_files_only=True)
            self.model = Wav2Vec2BertModel.from_pretrained(self.model_name, local_files_only=True).eval()
        except OSError as exc:
            raise BackendUnavailableError(
                f"{self.model_name} weights are not in the local Hugging Face cache: {exc}"
            ) from exc
        self.spec = EmbeddingBackendSpec("w2v-bert-2.0-meanpool", "audio", 1024)

    def embed_span(self, samples, sample_rate):
        import torch

        if sample_rate != 16000:
            n = int(round(len(samples) * 16000 / sample_rate))
            samples = np.interp(np.linspace(0, len(samples) - 1, n), np.arange(len(samples)), samples)
        inputs = self.extractor(np.asarray(samples, dtype=np.float32), sampling_rate=16000,
                                return_tensors="pt")
        with torch.no_grad():
            hidden = self.model(**inputs).last_hidden_state
        return hidden[0].mean(dim=0).numpy().astype(np.float32)


def _split_dim(backend_id: str) -> tuple[str, int | None]:
    name, _, dim = backend_id.partition("@")
    return name, int(dim) if dim else None


VISUAL_IDS = ("mean-pixel", "swin3d_b", "swin3d_b-untrained", "googlenet", "googlenet-untrained")
AUDIO_IDS = ("rms-bands", "w2v-bert-2.0")


def get_backend(backend_id: str):
    """Instantiate a backend. Raises BackendUnavailableError for missing weights."""
    name, dim = _split_dim(backend_id)
    if name == "mean-pixel":
        return MeanPixelBackend(dim or DEFAULT_SYNTHETIC_DIM)
    if name == "rms-bands":
        return RmsBandsBackend(dim or DEFAULT_SYNTHETIC_DIM)
    if name in ("swin3d_b", "swin3d_b-untrained"):
        return Swin3DBackend(pretrained=name == "swin3d_b")
    if name in ("googlenet", "googlenet-untrained"):
        return GoogLeNetFrameBackend(pretrained=name == "googlenet")
    if name == "w2v-bert-2.0":
        return W2VBertBackend()
    raise BackendUnavailableError(f"unknown embedding backend {backend_id!r}")


def backend_spec(backend_id: str) -> EmbeddingBackendSpec:
    """Spec of a backend id without loading weights."""
    name, dim = _split_dim(backend_id)
    if name == "mean-pixel":
        return EmbeddingBackendSpec(f"mean-pixel@{dim or DEFAULT_SYNTHETIC_DIM}", "visual", dim or DEFAULT_SYNTHETIC_DIM)
    if name == "rms-bands":
        return EmbeddingBackendSpec(f"rms-bands@{dim or DEFAULT_SYNTHETIC_DIM}", "audio", dim or DEFAULT_SYNTHETIC_DIM)
    if name == "swin3d_b":
        return EmbeddingBackendSpec("swin3d_b-k400-avgpool", "visual", 1024)
    if name == "swin3d_b-untrained":
        return EmbeddingBackendSpec("swin3d_b-untrained-avgpool", "visual", 1024)
    if name == "googlenet":
        return EmbeddingBackendSpec("googlenet-imagenet-pool5", "visual", 1024)
    if name == "googlenet-untrained":
        return EmbeddingBackendSpec("googlenet-untrained-pool5", "visual", 1024)
    if name == "w2v-bert-2.0":
        return EmbeddingBackendSpec("w2v-bert-2.0-meanpool", "audio", 1024)
    raise BackendUnavailableError(f"unknown embedding backend {backend_id!r}")
