"""The set of networks plus schedule that make up one enhancement model."""
import dataclasses
import hashlib
from dataclasses import dataclass, field

import torch

from .adjustment import ANet, ANetConfig
from .decomposition import DNet, DNetConfig
from .denoiser import ConditionalUNet, UNetConfig
from .diffusion import NoiseSchedule, make_schedule
from .refinement import RNet, RNetConfig
from .semantic import BackboneSpec, ConvEncoderBackbone

ENTRIES = ("dnet", "anet", "unet", "rnet", "seg_backbone")
TRAINABLE = ("anet", "unet", "rnet")


@dataclass
class ModelConfig:
    dnet: DNetConfig = field(default_factory=DNetConfig)
    anet: ANetConfig = field(default_factory=ANetConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    rnet: RNetConfig = field(default_factory=RNetConfig)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    backbone_seed: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        def tup(sub):
            return {k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()}
        return cls(
            dnet=DNetConfig(**d["dnet"]),
            anet=ANetConfig(**d["anet"]),
            unet=UNetConfig(**tup(d["unet"])),
            rnet=RNetConfig(**tup(d["rnet"])),
            backbone=BackboneSpec(**tup(d["backbone"])),
            backbone_seed=d["backbone_seed"],
            T=d["T"], beta_start=d["beta_start"], beta_end=d["beta_end"],
        )


@dataclass
class ModelBundle:
    dnet: DNet
    anet: ANet
    unet: ConditionalUNet
    rnet: RNet
    seg_backbone: torch.nn.Module
    schedule: NoiseSchedule
    config: ModelConfig

    @classmethod
    def create(cls, config=None, seed=0):
        """Fresh bundle; trainable weights come from ``seed``, the backbone
        from ``config.backbone_seed``."""
        config = config or ModelConfig()
        if config.rnet.condition_channels != config.anet.feature_channels:
            config.rnet = dataclasses.replace(config.rnet, condition_channels=config.anet.feature_channels)
        if config.unet.semantic_channels != tuple(config.backbone.channel_counts):
            config.unet = dataclasses.replace(config.unet, semantic_channels=tuple(config.backbone.channel_counts))
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            dnet = DNet(config.dnet)
            anet = ANet(config.anet)
            unet = ConditionalUNet(config.unet)
            rnet = RNet(config.rnet)
        backbone = ConvEncoderBackbone(config.backbone, seed=config.backbone_seed)
        schedule = make_schedule(config.T, config.beta_start, config.beta_end)
        return cls(dnet, anet, unet, rnet, backbone, schedule, config)

    def modules(self):
        return {name: getattr(self, name) for name in ENTRIES}

    def trainable_parameters(self):
        return [p for name in TRAINABLE for p in getattr(self, name).parameters()]

    def freeze_dnet(self):
        self.dnet.requires_grad_(False)
        self.dnet.eval()

    def to(self, dtype=None, device=None):
        for m in self.modules().values():
            m.to(dtype=dtype, device=device)
        return self

    def eval(self):
        for m in self.modules().values():
            m.eval()
        return self

    def state_dicts(self):
        return {name: m.state_dict() for name, m in self.modules().items()}

    def load_state_dicts(self, states):
        for name, m in self.modules().items():
            m.load_state_dict(states[name])

    def digest(self):
        """SHA-256 over every parameter and buffer, in a fixed order."""
        h = hashlib.sha256()
        for name, sd in self.state_dicts().items():
            for key in sorted(sd):
                t = sd[key].detach().cpu().contiguous()
                h.update(f"{name}.{key}:{t.dtype}:{tuple(t.shape)}".encode())
                h.update(t.numpy().tobytes())
        return h.hexdigest()
