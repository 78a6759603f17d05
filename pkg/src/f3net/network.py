"""Six-encoder segmentation network with modality-aware feature masking.

Each modality owns an independent encoder; encoder feature pyramids are
gated to exact zero for absent modalities, summed stage-wise, and decoded
by a single shared decoder with skip connections. The zero gate is
multiplicative, so an absent modality contributes nothing to the output
or to any gradient.

Masking scope: gating every stage (``all_stages``, default) makes the
output exactly invariant to the content of absent channels even through
the skip connections; ``deepest_only`` gates only the deepest stage and
lets shallower skips pass through.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .errors import CorruptFileError, ShapeError
from .volumes import Modality, ModalityPresence, NUM_MODALITIES

CHECKPOINT_FORMAT = "f3net-checkpoint-v1"

MASK_SCOPES = ("all_stages", "deepest_only")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters.

    Channels double per stage starting at ``base_channels``, capped at
    ``max_channels``. Input patches must be divisible by
    ``2**(num_stages - 1)`` along every axis.
    """

    num_stages: int = 4
    base_channels: int = 16
    num_classes: int = 2
    max_channels: int = 320
    negative_slope: float = 0.01
    mask_scope: str = "all_stages"
    channels_per_stage: Optional[tuple[int, ...]] = field(default=None)

    def __post_init__(self):
        if self.num_stages < 2:
            raise ShapeError(f"num_stages must be >= 2, got {self.num_stages}")
        if self.base_channels < 1 or self.num_classes < 2:
            raise ShapeError("base_channels must be >= 1 and num_classes >= 2")
        if self.mask_scope not in MASK_SCOPES:
            raise ShapeError(f"mask_scope must be one of {MASK_SCOPES}, got {self.mask_scope!r}")
        if self.channels_per_stage is None:
            channels = tuple(
                min(self.base_channels * 2**s, self.max_channels) for s in range(self.num_stages)
            )
            object.__setattr__(self, "channels_per_stage", channels)
        else:
            channels = tuple(int(c) for c in self.channels_per_stage)
            if len(channels) != self.num_stages or any(c < 1 for c in channels):
                raise ShapeError(f"channels_per_stage must list {self.num_stages} positive ints")
            object.__setattr__(self, "channels_per_stage", channels)

    @property
    def divisor(self) -> int:
        return 2 ** (self.num_stages - 1)

    def to_dict(self) -> dict:
        return {
            "num_stages": self.num_stages,
            "base_channels": self.base_channels,
            "num_classes": self.num_classes,
            "max_channels": self.max_channels,
            "negative_slope": self.negative_slope,
            "mask_scope": self.mask_scope,
            "channels_per_stage": list(self.channels_per_stage),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        if d.get("channels_per_stage") is not None:
            d["channels_per_stage"] = tuple(d["channels_per_stage"])
        return cls(**d)


class ConvBlock(nn.Module):
    """Two 3x3x3 convolutions with instance norm and leaky rectifier.

    The first convolution carries the stage's stride (2 for downsampling).
    """

    def __init__(self, in_channels, out_channels, stride=1, negative_slope=0.01):
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3, stride=stride, padding=1)
        self.norm1 = nn.InstanceNorm3d(out_channels, eps=1e-5, affine=True)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, stride=1, padding=1)
        self.norm2 = nn.InstanceNorm3d(out_channels, eps=1e-5, affine=True)
        self.act = nn.LeakyReLU(negative_slope)

    def forward(self, x):
        x = self.act(self.norm1(self.conv1(x)))
        return self.act(self.norm2(self.conv2(x)))


class Decoder(nn.Module):
    """Shared decoder: bottleneck, transpose-conv upsampling, skip fusion, head."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        ch = spec.channels_per_stage
        self.bottleneck = ConvBlock(ch[-1], ch[-1], negative_slope=spec.negative_slope)
        self.up = nn.ModuleList()
        self.blocks = nn.ModuleList()
        for s in range(spec.num_stages - 2, -1, -1):
            self.up.append(nn.ConvTranspose3d(ch[s + 1], ch[s], kernel_size=2, stride=2))
            self.blocks.append(ConvBlock(2 * ch[s], ch[s], negative_slope=spec.negative_slope))
        self.head = nn.Conv3d(ch[0], spec.num_classes, kernel_size=1)

    def forward(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        x = self.bottleneck(pyramid[-1])
        for i, (up, block) in enumerate(zip(self.up, self.blocks)):
            skip = pyramid[len(pyramid) - 2 - i]
            x = block(torch.cat([up(x), skip], dim=1))
        return self.head(x)


class F3NetModel(nn.Module):
    """The full network: six independent encoders and one shared decoder."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        ch = spec.channels_per_stage
        self.encoder = nn.ModuleDict()
        for m in Modality:
            stages = nn.ModuleList()
            in_ch = 1
            for s in range(spec.num_stages):
                stages.append(
                    ConvBlock(in_ch, ch[s], stride=1 if s == 0 else 2, negative_slope=spec.negative_slope)
                )
                in_ch = ch[s]
            self.encoder[m.name.lower()] = stages
        self.decoder = Decoder(spec)
        self.apply(_init_weights)

    def check_patch_shape(self, spatial: Sequence[int]) -> None:
        d = self.spec.divisor
        if any(int(n) % d != 0 for n in spatial):
            raise ShapeError(
                f"patch shape {tuple(spatial)} must be divisible by {d} on every axis "
                f"({self.spec.num_stages} stages)"
            )

    def encode(self, x: torch.Tensor, m: Modality) -> list[torch.Tensor]:
        """Run modality ``m``'s encoder on a (B, 1, x, y, z) channel.

        Returns the per-stage feature pyramid, full resolution first.
        """
        self.check_patch_shape(x.shape[2:])
        features = []
        for stage in self.encoder[Modality(m).name.lower()]:
            x = stage(x)
            features.append(x)
        return features

    def encoder_parameters(self, m: Modality):
        return self.encoder[Modality(m).name.lower()].parameters()

    def forward(self, x: torch.Tensor, presence) -> torch.Tensor:
        """Segmentation logits for a 6-channel patch or batch of patches.

        Args:
            x: (6, x, y, z) or (B, 6, x, y, z) tensor.
            presence: per-modality flags, shaped (6,) or (B, 6); anything
                convertible to a bool tensor (including ModalityPresence).

        Returns:
            Logits of shape (num_classes, x, y, z) or (B, num_classes, x, y, z).
        """
        unbatched = x.dim() == 4
        if unbatched:
            x = x.unsqueeze(0)
        if x.dim() != 5 or x.shape[1] != NUM_MODALITIES:
            raise ShapeError(f"expected (B, {NUM_MODALITIES}, x, y, z) input, got {tuple(x.shape)}")
        self.check_patch_shape(x.shape[2:])
        gates = _presence_gates(presence, x.shape[0], x.device, x.dtype)

        pyramids = []
        for m in Modality:
            gate = gates[:, int(m)]
            if self.spec.mask_scope == "all_stages" and not bool(gate.any()):
                # Absent batch-wide: substitute zero pyramids without touching
                # the encoder, so its parameters stay outside the graph.
                pyramids.append(self._zero_pyramid(x))
                continue
            features = self.encode(x[:, int(m) : int(m) + 1], m)
            pyramids.append(mask_features(features, gate, self.spec.mask_scope))
        fused = fuse(pyramids)
        logits = self.decoder(fused)
        return logits.squeeze(0) if unbatched else logits

    def _zero_pyramid(self, x: torch.Tensor) -> list[torch.Tensor]:
        b = x.shape[0]
        spatial = x.shape[2:]
        out = []
        for s, c in enumerate(self.spec.channels_per_stage):
            shape = (b, c) + tuple(n // 2**s for n in spatial)
            out.append(torch.zeros(shape, device=x.device, dtype=x.dtype))
        return out


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv3d, nn.ConvTranspose3d)):
        nn.init.kaiming_normal_(module.weight, a=0.01, nonlinearity="leaky_relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)


def _presence_gates(presence, batch: int, device, dtype) -> torch.Tensor:
    """Normalize any presence representation to a (B, 6) float gate tensor."""
    if isinstance(presence, ModalityPresence):
        flags = torch.tensor(presence.present, dtype=torch.bool)
    elif isinstance(presence, torch.Tensor):
        flags = presence.bool()
    elif isinstance(presence, (list, tuple)) and presence and isinstance(presence[0], ModalityPresence):
        flags = torch.tensor([p.present for p in presence], dtype=torch.bool)
    else:
        flags = torch.as_tensor(np.asarray(presence)).bool()
    if flags.dim() == 1:
        flags = flags.unsqueeze(0).expand(batch, -1)
    if flags.shape != (batch, NUM_MODALITIES):
        raise ShapeError(f"presence must have shape ({batch}, {NUM_MODALITIES}), got {tuple(flags.shape)}")
    return flags.to(device=device, dtype=dtype)


def mask_features(
    features: Sequence[torch.Tensor], gate, scope: str = "all_stages"
) -> list[torch.Tensor]:
    """Zero an absent modality's feature pyramid via a multiplicative gate.

    ``gate`` holds one 0/1 value per batch item (a scalar bool/float
    broadcasts over the batch). Multiplying by an exact zero forces
    features and all gradients through them to exact zero.
    """
    if scope not in MASK_SCOPES:
        raise ShapeError(f"unknown mask scope {scope!r}")
    gate = torch.as_tensor(gate, dtype=features[0].dtype, device=features[0].device)
    view = gate.view(-1, *([1] * (features[0].dim() - 1)))
    if scope == "all_stages":
        return [f * view for f in features]
    return list(features[:-1]) + [features[-1] * view]


def fuse(pyramids: Sequence[Sequence[torch.Tensor]]) -> list[torch.Tensor]:
    """Stage-wise elementwise sum of per-modality feature pyramids."""
    num_stages = len(pyramids[0])
    for p in pyramids:
        if len(p) != num_stages or any(a.shape != b.shape for a, b in zip(p, pyramids[0])):
            raise ShapeError("feature pyramids disagree on stage shapes")
    return [torch.stack([p[s] for p in pyramids], dim=0).sum(dim=0) for s in range(num_stages)]


def save_checkpoint(path, model: F3NetModel, extra: Optional[dict] = None, meta: Optional[dict] = None):
    """Write parameters, spec, and optional extra arrays to one .npz archive.

    Parameter keys follow the module tree (``encoder.{modality}.{stage}...``,
    ``decoder...``); extra arrays (e.g. optimizer momentum) are stored under
    ``__extra__/``; ``meta`` must be JSON-serializable.
    """
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    arrays["__spec__"] = np.array(json.dumps(model.spec.to_dict()))
    if meta is not None:
        arrays["__meta__"] = np.array(json.dumps(meta))
    if extra:
        for k, v in extra.items():
            arrays[f"__extra__/{k}"] = np.asarray(v)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[F3NetModel, dict, dict]:
    """Rebuild a model from a checkpoint archive.

    Returns:
        (model, extra, meta): the restored model plus any extra arrays and
        metadata stored alongside it.
    """
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise CorruptFileError(f"{path}: not a readable checkpoint ({exc})") from exc
    fmt = str(arrays.pop("__format__", ""))
    if fmt != CHECKPOINT_FORMAT:
        raise CorruptFileError(f"{path}: unsupported checkpoint format {fmt!r}")
    spec = NetworkSpec.from_dict(json.loads(str(arrays.pop("__spec__"))))
    meta = json.loads(str(arrays.pop("__meta__"))) if "__meta__" in arrays else {}
    extra = {}
    params = {}
    for k, v in arrays.items():
        if k.startswith("__extra__/"):
            extra[k[len("__extra__/") :]] = v
        else:
            params[k] = torch.from_numpy(v)
    model = F3NetModel(spec)
    model.load_state_dict(params)
    return model, extra, meta
