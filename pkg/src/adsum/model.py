"""Two-stream importance scorer: attention over the feature map, Hadamard merge,
per-clip linear + sigmoid head, early or late fusion, BCE/MSE training."""
from __future__ import annotations

import base64
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import BackendUnavailableError, CheckpointError, ShapeError, TrainingError
from .features import FeatureMap

log = logging.getLogger(__name__)

EPS = 1e-7
FUSION_MODES = ("visual_only", "audio_only", "early", "late")
STREAM_INDEX = {"visual": 1, "audio": 2, "fused": 3}


@dataclass
class AttentionScorerConfig:
    attention_backbone_id: str = "googlenet"  # "googlenet", "googlenet-untrained" or "row-local"
    input_dim: int = 1024
    fine_tune_backbone: bool = False
    seed: int = 0


@dataclass
class FusionConfig:
    mode: str = "early"
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ValueError(f"fusion mode must be one of {FUSION_MODES}, got {self.mode!r}")
        for name in ("alpha", "beta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def streams(self) -> tuple[str, ...]:
        return {"visual_only": ("visual",), "audio_only": ("audio",),
                "early": ("fused",), "late": ("visual", "audio")}[self.mode]

    @property
    def inputs(self) -> tuple[str, ...]:
        """Feature streams this mode reads."""
        return {"visual_only": ("visual",), "audio_only": ("audio",)}.get(self.mode, ("visual", "audio"))


@dataclass
class TrainConfig:
    loss: str = "bce"
    epochs: int = 50
    batch_size: int = 1
    learning_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("bce", "mse"):
            raise ValueError("loss must be 'bce' or 'mse'")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 (one video per step) is supported")


@dataclass
class ImportanceVector:
    scores: np.ndarray  # one per clip
    stride: int = 12
    frame_count: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.scores)

    def expand(self, frame_count: int | None = None, stride: int | None = None) -> np.ndarray:
        """Per-frame scores: clip t covers frames [t*stride, (t+1)*stride)."""
        n = frame_count if frame_count is not None else self.frame_count
        stride = stride or self.stride
        if n is None:
            raise ValueError("frame_count unknown")
        if math.ceil(n / stride) != len(self.scores):
            raise ShapeError(f"{len(self.scores)} clips do not cover {n} frames at stride {stride}")
        return np.repeat(self.scores, stride)[:n]


# --------------------------------------------------------------------------
# fusion and losses (numpy)


def fuse_late(iv: ImportanceVector, ia: ImportanceVector, alpha: float) -> ImportanceVector:
    a, b = np.asarray(iv.scores), np.asarray(ia.scores)
    if a.shape != b.shape:
        raise ShapeError(f"importance vectors differ in length: {a.shape} vs {b.shape}")
    return ImportanceVector(alpha * a + (1 - alpha) * b, iv.stride, iv.frame_count)


def fuse_early(fv: FeatureMap, fa: FeatureMap, beta: float) -> FeatureMap:
    if fv.values.shape != fa.values.shape:
        raise ShapeError(f"early fusion needs equal shapes, got {fv.values.shape} and {fa.values.shape}")
    if beta == 1.0:
        values = fv.values.copy()
    elif beta == 0.0:
        values = fa.values.copy()
    else:
        values = beta * fv.values + (1 - beta) * fa.values
    return FeatureMap("fused", values, f"{fv.backend_id}|{fa.backend_id}", fv.clips, {**fa.flags, **fv.flags})


def _check_lengths(pred, gt):
    p = np.asarray(pred.scores if isinstance(pred, ImportanceVector) else pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"prediction length {p.shape} != label length {g.shape}")
    return p, g


def bce_loss(pred, gt) -> float:
    p, g = _check_lengths(pred, gt)
    p = np.clip(p, EPS, 1 - EPS)
    return float(-np.mean(g * np.log(p) + (1 - g) * np.log(1 - p)))


def bce_grad(pred, gt) -> np.ndarray:
    """Gradient of ``bce_loss`` with respect to the (unclamped interior) predictions."""
    p, g = _check_lengths(pred, gt)
    return -(g / p - (1 - g) / (1 - p)) / p.size


def mse_loss(pred, gt) -> float:
    p, g = _check_lengths(pred, gt)
    return float(np.mean((p - g) ** 2))


def mse_grad(pred, gt) -> np.ndarray:
    p, g = _check_lengths(pred, gt)
    return 2 * (p - g) / p.size


def _torch_loss(kind: str, p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    if kind == "bce":
        p = p.clamp(EPS, 1 - EPS)
        return -(g * torch.log(p) + (1 - g) * torch.log(1 - p)).mean()
    return ((p - g) ** 2).mean()


# --------------------------------------------------------------------------
# networks


def _generator(seed: int, *salt: int) -> torch.Generator:
    entropy = np.random.SeedSequence([seed, *salt]).generate_state(1)[0]
    return torch.Generator().manual_seed(int(entropy))


class RowLocalAttention(nn.Module):
    """Per-row gating a[t, d] = sigmoid(w[d] * x[t, d] + b[d]); each row sees only itself."""

    pretrained = False

    def __init__(self, dim: int, gen: torch.Generator):
        super().__init__()
        self.weight = nn.Parameter(torch.rand(dim, generator=gen) * 2 - 1)
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, fm: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(fm * self.weight + self.bias)


class GoogLeNetAttention(nn.Module):
    """Treat the T x D map as an image and derive a T x D attention map from GoogLeNet.

    The single-channel map is replicated to three channels and resized to
    224 x 224; the last pre-classifier activation (1024 x 7 x 7) is projected
    to one channel by a 1x1 conv, resized back to T x D and squashed by a
    sigmoid.
    """

    url = "https://download.pytorch.org/models/googlenet-1378be20.pth"

    def __init__(self, gen: torch.Generator, pretrained: bool = True, fine_tune: bool = False):
        super().__init__()
        self.fine_tune = fine_tune
        try:
            from torchvision.models import googlenet
        except ImportError as exc:
            raise BackendUnavailableError(f"googlenet attention needs torchvision: {exc}") from exc
        if pretrained:
            from .features.backends import _hub_checkpoint
            path = _hub_checkpoint(self.url)
            net = googlenet(weights=None, aux_logits=False, init_weights=False)
            state = torch.load(path, map_location="cpu")
            net.load_state_dict({k: v for k, v in state.items() if not k.startswith("aux")})
        else:
            with torch.random.fork_rng():
                torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
                net = googlenet(weights=None, aux_logits=False, init_weights=True)
        self.pretrained = pretrained
        self.backbone = nn.Sequential(
            net.conv1, net.maxpool1, net.conv2, net.conv3, net.maxpool2,
            net.inception3a, net.inception3b, net.maxpool3,
            net.inception4a, net.inception4b, net.inception4c, net.inception4d, net.inception4e,
            net.maxpool4, net.inception5a, net.inception5b,
        )
        self.proj = nn.Conv2d(1024, 1, kernel_size=1)
        bound = 1 / math.sqrt(1024)
        with torch.no_grad():
            self.proj.weight.copy_(torch.rand(self.proj.weight.shape, generator=gen) * 2 * bound - bound)
            self.proj.bias.zero_()

    def train(self, mode: bool = True):
        super().train(mode)
        if not self.fine_tune:
            self.backbone.eval()  # frozen batch-norm statistics
        return self

    def forward(self, fm: torch.Tensor) -> torch.Tensor:
        t, d = fm.shape
        img = fm.reshape(1, 1, t, d).expand(1, 3, t, d)
        img = F.interpolate(img, size=(224, 224), mode="bilinear", align_corners=False)
        act = self.proj(self.backbone(img))
        att = F.interpolate(act, size=(t, d), mode="bilinear", align_corners=False)
        return torch.sigmoid(att.reshape(t, d))


class StreamScorer(nn.Module):
    """attention map -> Hadamard product with the feature map -> linear -> sigmoid, per row."""

    def __init__(self, cfg: AttentionScorerConfig, salt: int):
        super().__init__()
        gen = _generator(cfg.seed, salt)
        backbone = cfg.attention_backbone_id
        if backbone == "row-local":
            self.attention = RowLocalAttention(cfg.input_dim, gen)
        elif backbone in ("googlenet", "googlenet-untrained"):
            self.attention = GoogLeNetAttention(gen, pretrained=backbone == "googlenet",
                                                fine_tune=cfg.fine_tune_backbone)
        else:
            raise BackendUnavailableError(f"unknown attention backbone {backbone!r}")
        self.head = nn.Linear(cfg.input_dim, 1)
        bound = 1 / math.sqrt(cfg.input_dim)
        with torch.no_grad():
            self.head.weight.copy_(torch.rand(self.head.weight.shape, generator=gen) * 2 * bound - bound)
            self.head.bias.copy_(torch.rand(self.head.bias.shape, generator=gen) * 2 * bound - bound)
        self.input_dim = cfg.input_dim

    def forward(self, fm: torch.Tensor) -> torch.Tensor:
        if fm.ndim != 2 or fm.shape[1] != self.input_dim:
            raise ShapeError(f"feature map shape {tuple(fm.shape)} does not match input_dim {self.input_dim}")
        merged = fm * self.attention(fm)
        return torch.sigmoid(self.head(merged)).squeeze(-1)


class AdSumNet(nn.Module):
    def __init__(self, cfg: AttentionScorerConfig, fusion: FusionConfig):
        super().__init__()
        self.fusion = fusion
        self.scorers = nn.ModuleDict({s: StreamScorer(cfg, STREAM_INDEX[s]) for s in fusion.streams})

    def forward(self, fv: torch.Tensor | None, fa: torch.Tensor | None) -> torch.Tensor:
        mode = self.fusion.mode
        if mode == "visual_only":
            return self.scorers["visual"](fv)
        if mode == "audio_only":
            return self.scorers["audio"](fa)
        if mode == "early":
            b = self.fusion.beta
            return self.scorers["fused"](b * fv + (1 - b) * fa)
        a = self.fusion.alpha
        return a * self.scorers["visual"](fv) + (1 - a) * self.scorers["audio"](fa)

    def frozen_prefixes(self, cfg: AttentionScorerConfig) -> list[str]:
        """Parameter-name prefixes left untouched by training (the attention backbone)."""
        # the row-local gate has no pretrained weights, so it always trains
        if cfg.fine_tune_backbone or cfg.attention_backbone_id == "row-local":
            return []
        return [f"scorers.{s}.attention.backbone." for s in self.scorers]


def score_stream(fm: FeatureMap, scorer: StreamScorer, stride: int = 12,
                 frame_count: int | None = None) -> ImportanceVector:
    if fm.dim != scorer.input_dim:
        raise ShapeError(f"feature dim {fm.dim} != scorer input_dim {scorer.input_dim}")
    with torch.no_grad():
        scores = scorer(torch.from_numpy(fm.values)).double().numpy()
    return ImportanceVector(scores, stride, frame_count)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainingExample:
    video_id: str
    labels: np.ndarray  # per clip, label at the focal frame
    visual: FeatureMap | None = None
    audio: FeatureMap | None = None
    frame_count: int | None = None


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0
    loss: str = "bce"

    def to_json(self) -> dict:
        return asdict(self)


def _inputs(example: TrainingExample, fusion: FusionConfig) -> tuple[torch.Tensor | None, torch.Tensor | None]:
    fv = fa = None
    if "visual" in fusion.inputs:
        if example.visual is None:
            raise TrainingError(f"{example.video_id}: visual features missing")
        fv = torch.from_numpy(example.visual.values)
    if "audio" in fusion.inputs:
        if example.audio is None:
            raise TrainingError(f"{example.video_id}: audio features missing")
        fa = torch.from_numpy(example.audio.values)
    if fv is not None and fa is not None and fv.shape != fa.shape:
        raise ShapeError(f"{example.video_id}: visual {tuple(fv.shape)} and audio {tuple(fa.shape)} maps differ")
    return fv, fa


class TrainedScorer:
    """A network plus everything needed to reproduce and validate its use."""

    def __init__(self, net: AdSumNet, scorer_cfg: AttentionScorerConfig, fusion: FusionConfig,
                 train_cfg: TrainConfig, backends: dict[str, str], meta: dict | None = None):
        self.net = net
        self.scorer_cfg = scorer_cfg
        self.fusion = fusion
        self.train_cfg = train_cfg
        self.backends = dict(backends)
        self.meta = dict(meta or {})

    def predict_scores(self, example: TrainingExample, fusion: FusionConfig | None = None) -> np.ndarray:
        fusion = fusion or self.fusion
        for stream in fusion.inputs:
            got = getattr(example, stream)
            if got is not None and stream in self.backends and got.backend_id != self.backends[stream]:
                raise CheckpointError(
                    f"{stream} features from {got.backend_id!r}, scorer trained on {self.backends.get(stream)!r}"
                )
        missing = set(fusion.streams) - set(self.net.scorers)
        if missing:
            raise CheckpointError(f"scorer has no {sorted(missing)} stream(s) for mode {fusion.mode!r}")
        fv, fa = _inputs(example, fusion)
        saved = self.net.fusion
        self.net.fusion = fusion
        try:
            with torch.no_grad():
                return self.net(fv, fa).double().numpy()
        finally:
            self.net.fusion = saved

    # checkpoint I/O -------------------------------------------------------

    def state(self) -> dict:
        # a frozen GoogLeNet is rebuilt from its weights file or seed on load
        skip = [p for p in self.net.frozen_prefixes(self.scorer_cfg) if p.endswith("backbone.")]
        params = {}
        for name, t in self.net.state_dict().items():
            if any(name.startswith(p) for p in skip):
                continue
            arr = np.ascontiguousarray(t.detach().numpy(), dtype="<f4")
            params[name] = {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode()}
        return {
            "format": "adsum-checkpoint/1",
            "scorer": asdict(self.scorer_cfg),
            "fusion": asdict(self.fusion),
            "train": asdict(self.train_cfg),
            "backends": self.backends,
            "meta": self.meta,
            "params": params,
        }

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.state(), sort_keys=True, indent=1) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainedScorer":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if doc.get("format") != "adsum-checkpoint/1":
            raise CheckpointError(f"{path}: not an adsum checkpoint")
        scorer_cfg = AttentionScorerConfig(**doc["scorer"])
        fusion = FusionConfig(**doc["fusion"])
        net = AdSumNet(scorer_cfg, fusion)
        state = net.state_dict()
        for name, rec in doc["params"].items():
            if name not in state:
                raise CheckpointError(f"{path}: unexpected parameter {name}")
            arr = np.frombuffer(base64.b64decode(rec["data"]), dtype="<f4").reshape(rec["shape"])
            state[name] = torch.from_numpy(arr.copy())
        net.load_state_dict(state)
        net.eval()
        return cls(net, scorer_cfg, fusion, TrainConfig(**doc["train"]), doc["backends"], doc.get("meta"))


def train(examples: Sequence[TrainingExample], fusion: FusionConfig, tc: TrainConfig,
          scorer_cfg: AttentionScorerConfig, backends: dict[str, str] | None = None,
          meta: dict | None = None) -> tuple[TrainedScorer, TrainReport]:
    """Adam, one video per step, ``tc.epochs`` passes in a seeded shuffled order."""
    if not examples:
        raise TrainingError("empty training set")
    net = AdSumNet(scorer_cfg, fusion)
    frozen = net.frozen_prefixes(scorer_cfg)
    params = []
    for name, p in net.named_parameters():
        if any(name.startswith(f) for f in frozen):
            p.requires_grad_(False)
        else:
            params.append(p)
    opt = torch.optim.Adam(params, lr=tc.learning_rate)
    gen = _generator(tc.seed, 0)
    data = [(_inputs(ex, fusion), torch.as_tensor(np.asarray(ex.labels), dtype=torch.float32), ex.video_id)
            for ex in examples]
    for (fv, fa), g, vid in data:
        n = (fv if fv is not None else fa).shape[0]
        if n != g.shape[0]:
            raise ShapeError(f"{vid}: {n} clips but {g.shape[0]} labels")

    report = TrainReport(loss=tc.loss)
    net.train()
    for epoch in range(tc.epochs):
        order = torch.randperm(len(data), generator=gen).tolist()
        total = 0.0
        for i in order:
            (fv, fa), g, vid = data[i]
            opt.zero_grad()
            loss = _torch_loss(tc.loss, net(fv, fa), g)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} on video {vid}")
            loss.backward()
            opt.step()
            total += loss.item()
            report.steps += 1
        report.epoch_losses.append(total / len(data))
    net.eval()
    return TrainedScorer(net, scorer_cfg, fusion, tc, backends or {}, meta), report
