"""Joint optimisation of ANet, UNet and RNet; DNet pre-training.

DNet and the semantic backbone stay frozen during the main stage. ANet is
trained by its own loss only: every part of its output is detached before
the UNet and RNet see it.
"""
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch

from .adjustment import RetinexCondition, adjust, loss_anet, zero_condition_features
from .decomposition import decompose, dnet_pretrain_loss
from .diffusion import approx_x0, forward_diffuse
from .errors import NumericalError
from .refinement import loss_rnet, refine
from .sampler import SamplerConfig
from .semantic import extract

log = logging.getLogger(__name__)

LOSS_KEYS = ("unet", "rnet", "anet", "all")


@dataclass
class TrainConfig:
    lambda_unet: float = 1.0
    lambda_rnet: float = 1.0
    lambda_anet: float = 0.1
    lambda_ja: float = 1.0
    lambda_je: float = 1.0
    hist_bins: int = 64
    batch_size: int = 8
    patch_size: int = 256
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 100_000
    iterations: int = 600_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    flip: bool = True
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 10_000
    pretrain_iterations: int = 2000
    pretrain_lr: float = 1e-3

    def __post_init__(self):
        for name in ("lambda_unet", "lambda_rnet", "lambda_anet", "lambda_ja", "lambda_je"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.patch_size % 16:
            raise ValueError(f"patch_size must be divisible by 16, got {self.patch_size}")

    @classmethod
    def desk(cls, **kw):
        """Small-scale settings for CPU runs on a handful of pairs."""
        base = dict(batch_size=2, patch_size=64, lr_decay_every=2000, iterations=2000,
                    log_every=10, checkpoint_every=500, pretrain_iterations=400)
        base.update(kw)
        return cls(**base)


def lr_at(iteration, config):
    return config.lr * config.lr_decay ** (iteration // config.lr_decay_every)


def make_optimizer(bundle, config):
    return torch.optim.Adam(bundle.trainable_parameters(), lr=config.lr,
                            betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps)


def compute_losses(y, x0, t, eps, bundle, config, toggles=None):
    """Loss terms for one batch with given timesteps and noise.

    Returns a dict with ``unet``, ``rnet``, ``anet`` and the weighted ``all``.
    """
    toggles = toggles or SamplerConfig()
    sched = bundle.schedule
    x_t = forward_diffuse(x0, t, eps, sched)
    gamma = torch.as_tensor(sched.gamma(t.cpu().numpy()), dtype=y.dtype)

    cond = None
    l_anet = torch.zeros((), dtype=y.dtype)
    if toggles.needs_decomposition:
        with torch.no_grad():
            dec = decompose(y, x_t, bundle.dnet)
        if toggles.use_anet:
            with torch.no_grad():
                targets = decompose(x0, x0, bundle.dnet)
            adjusted = adjust(dec, gamma, bundle.anet)
            l_anet = loss_anet(adjusted, targets, config.lambda_ja, config.lambda_je, config.hist_bins)
            cond = adjusted.detach()
        else:
            B, _, H, W = y.shape
            cond = RetinexCondition(dec.R, dec.L,
                                    zero_condition_features(bundle.anet.config, B, H, W, y.dtype))
    seg = extract(y, bundle.seg_backbone) if toggles.use_semantic_cond else None

    eps_hat = bundle.unet(x_t, y, gamma, cond if toggles.use_retinex_cond else None, seg)
    l_unet = torch.mean((eps_hat - eps) ** 2)
    x0_hat = approx_x0(x_t, eps_hat, t, sched)
    refined = refine(x0_hat, cond, bundle.rnet, toggles.use_frcm, toggles.use_ircm)
    l_rnet = loss_rnet(refined, x0)
    total = config.lambda_unet * l_unet + config.lambda_rnet * l_rnet + config.lambda_anet * l_anet
    return {"unet": l_unet, "rnet": l_rnet, "anet": l_anet, "all": total}


def draw_step_noise(x0, T, generator):
    t = torch.randint(1, T + 1, (x0.shape[0],), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return t, eps


def train_step(batch, bundle, optimizer, config, generator, iteration=0, toggles=None):
    """One optimiser update; returns the float loss components and lr."""
    y, x0 = batch
    t, eps = draw_step_noise(x0, bundle.schedule.T, generator)
    lr = lr_at(iteration, config)
    for group in optimizer.param_groups:
        group["lr"] = lr
    losses = compute_losses(y, x0, t, eps, bundle, config, toggles)
    report = {k: float(v.detach()) for k, v in losses.items()}
    if not all(math.isfinite(v) for v in report.values()):
        raise NumericalError(f"training loss {report} (t={t.tolist()})", iteration)
    optimizer.zero_grad(set_to_none=True)
    losses["all"].backward()
    optimizer.step()
    report["lr"] = lr
    return report


def pretrain_dnet(dataset, bundle, config, generator=None):
    """Fit DNet on low/high pairs, each image fed as both inputs, then freeze it."""
    gen = generator or torch.Generator().manual_seed(config.seed)
    dnet = bundle.dnet
    dnet.requires_grad_(True)
    dnet.train()
    opt = torch.optim.Adam(dnet.parameters(), lr=config.pretrain_lr,
                           betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps)
    history = []
    for it in range(config.pretrain_iterations):
        low, high = dataset.sample_batch(config.batch_size, config.patch_size, gen, config.flip)
        total, parts = dnet_pretrain_loss(low, high, decompose(low, low, dnet), decompose(high, high, dnet))
        if not torch.isfinite(total):
            raise NumericalError("dnet pretraining", it)
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()
        history.append({"iteration": it + 1, "loss": float(total.detach()),
                        **{k: float(v.detach()) for k, v in parts.items()}})
    bundle.freeze_dnet()
    return history


class Trainer:
    """Main-stage training loop state: optimiser, RNG and iteration counter."""

    def __init__(self, bundle, dataset, config, toggles=None):
        self.bundle = bundle
        self.dataset = dataset
        self.config = config
        self.toggles = toggles or SamplerConfig()
        self.optimizer = make_optimizer(bundle, config)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.iteration = 0
        bundle.freeze_dnet()
        for name in ("anet", "unet", "rnet"):
            getattr(bundle, name).train()

    def step(self):
        batch = self.dataset.sample_batch(
            self.config.batch_size, self.config.patch_size, self.generator, self.config.flip)
        report = train_step(batch, self.bundle, self.optimizer, self.config, self.generator,
                            self.iteration, self.toggles)
        self.iteration += 1
        report["iteration"] = self.iteration
        return report

    def state(self):
        return {"iteration": self.iteration, "optimizer": self.optimizer.state_dict(),
                "rng_state": self.generator.get_state()}

    def restore(self, iteration, optimizer_state, rng_state):
        self.iteration = iteration
        if optimizer_state is not None:
            self.optimizer.load_state_dict(optimizer_state)
        if rng_state is not None:
            self.generator.set_state(rng_state)

    def run(self, iterations=None, out_dir=None, on_log=None):
        """Train up to ``iterations`` total steps; logs JSON lines and
        periodic checkpoints under ``out_dir`` when given. ``on_log`` is
        called with each logged record."""
        from .checkpoint import save_checkpoint

        target = self.config.iterations if iterations is None else iterations
        out = Path(out_dir) if out_dir else None
        log_file = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            log_file = open(out / "train_log.jsonl", "a")
        history = []
        try:
            while self.iteration < target:
                report = self.step()
                history.append(report)
                if log_file and self.iteration % self.config.log_every == 0:
                    log_file.write(json.dumps(report) + "\n")
                    log_file.flush()
                if self.iteration % self.config.log_every == 0:
                    if on_log:
                        on_log(report)
                    log.info("iter %d  L_all %.5f  lr %.2e", self.iteration, report["all"], report["lr"])
                if out is not None and (self.iteration % self.config.checkpoint_every == 0
                                        or self.iteration == target):
                    path = out / f"ckpt_{self.iteration:07d}.pt"
                    save_checkpoint(path, self.bundle, train_config=self.config,
                                    sampler_config=self.toggles, **self.state())
                    save_checkpoint(out / "latest.pt", self.bundle, train_config=self.config,
                                    sampler_config=self.toggles, **self.state())
        finally:
            if log_file:
                log_file.close()
        return history


def train(dataset, bundle, config, toggles=None, out_dir=None, resume=None):
    """Main-stage training; ``resume`` is a loaded checkpoint to continue from."""
    trainer = Trainer(bundle, dataset, config, toggles)
    if resume is not None:
        trainer.restore(resume.iteration, resume.optimizer, resume.rng_state)
    return trainer.run(out_dir=out_dir)
