"""Versioned single-file checkpoints of a model bundle and training state."""
import dataclasses
import io
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import torch

from .bundle import ENTRIES, ModelBundle, ModelConfig
from .diffusion import NoiseSchedule
from .errors import CheckpointError, CheckpointVersionError, MissingEntryError

FORMAT = "retinex-diffusion-bundle"
VERSION = 1


@dataclass
class Checkpoint:
    bundle: ModelBundle
    iteration: int = 0
    train_config: Optional[dict] = None
    sampler_config: Optional[dict] = None
    optimizer: Optional[dict] = None
    rng_state: Optional[torch.Tensor] = None
    extra: Any = None


def _as_dict(cfg):
    if cfg is None or isinstance(cfg, dict):
        return cfg
    return dataclasses.asdict(cfg)


def checkpoint_payload(bundle, iteration=0, train_config=None, sampler_config=None,
                       optimizer=None, rng_state=None):
    return {
        "format": FORMAT,
        "version": VERSION,
        "model_config": bundle.config.to_dict(),
        "schedule": bundle.schedule.to_dict(),
        "entries": bundle.state_dicts(),
        "train_config": _as_dict(train_config),
        "sampler_config": _as_dict(sampler_config),
        "iteration": int(iteration),
        "optimizer": optimizer,
        "rng_state": rng_state,
    }


def save_checkpoint(path, bundle, iteration=0, train_config=None, sampler_config=None,
                    optimizer=None, rng_state=None):
    """Write atomically: serialize to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(checkpoint_payload(bundle, iteration, train_config, sampler_config,
                                  optimizer, rng_state), buf)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointVersionError(
            f"{path} has format version {payload.get('version')}, expected {VERSION}")
    entries = payload.get("entries", {})
    for name in ENTRIES:
        if name not in entries:
            raise MissingEntryError(name)
    config = ModelConfig.from_dict(payload["model_config"])
    bundle = ModelBundle.create(config)
    bundle.schedule = NoiseSchedule.from_dict(payload["schedule"])
    bundle.load_state_dicts(entries)
    bundle.freeze_dnet()
    return Checkpoint(
        bundle=bundle,
        iteration=payload.get("iteration", 0),
        train_config=payload.get("train_config"),
        sampler_config=payload.get("sampler_config"),
        optimizer=payload.get("optimizer"),
        rng_state=payload.get("rng_state"),
    )


def resave(ckpt, path):
    """Write a loaded checkpoint back out unchanged."""
    return save_checkpoint(path, ckpt.bundle, ckpt.iteration, ckpt.train_config,
                           ckpt.sampler_config, ckpt.optimizer, ckpt.rng_state)
