"""Noise schedule and closed-form diffusion updates.

Timesteps are 1-based: ``t`` in ``[1, T]`` indexes ``schedule.alphas[t - 1]``.
``t = 0`` is accepted wherever a cumulative product is read and means the
clean signal (``gamma_0 = 1``). ``t`` may be an int or a 1-D integer tensor
with one entry per batch element.
"""
from dataclasses import dataclass

import numpy as np
import torch

from .errors import OrderingError, ParameterError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    alphas: np.ndarray
    gammas: np.ndarray
    sigmas: np.ndarray

    @property
    def T(self):
        return len(self.alphas)

    def gamma(self, t):
        """Cumulative product at step ``t`` with ``gamma(0) == 1``."""
        padded = np.concatenate([[1.0], self.gammas])
        return padded[np.asarray(t)]

    def alpha(self, t):
        return self.alphas[np.asarray(t) - 1]

    def check_step(self, t):
        arr = np.asarray(t)
        if arr.size and (arr.min() < 1 or arr.max() > self.T):
            raise ParameterError(f"timestep {t} outside [1, {self.T}]")

    def to_dict(self):
        return {"alphas": self.alphas.tolist()}

    @classmethod
    def from_alphas(cls, alphas):
        alphas = np.asarray(alphas, dtype=np.float64)
        gammas = np.cumprod(alphas)
        if not gammas[-1] > 0.0:
            raise ParameterError("cumulative product underflows to 0; use fewer steps or smaller betas")
        gammas_prev = np.concatenate([[1.0], gammas[:-1]])
        # DDPM posterior variance; unused by the deterministic sampler.
        sigmas = np.sqrt((1.0 - gammas_prev) / (1.0 - gammas) * (1.0 - alphas))
        return cls(alphas=alphas, gammas=gammas, sigmas=sigmas)

    @classmethod
    def from_dict(cls, d):
        return cls.from_alphas(d["alphas"])


def make_schedule(T=1000, beta_start=1e-4, beta_end=2e-2):
    """Linear-beta schedule with ``alpha_t = 1 - beta_t``."""
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    return NoiseSchedule.from_alphas(1.0 - betas)


def ddim_timesteps(T, steps):
    """``steps`` uniformly spaced timesteps in ``[1, T]``, descending, ending at 1."""
    if not 1 <= steps <= T:
        raise ParameterError(f"steps must lie in [1, {T}], got {steps}")
    ts = np.linspace(1, T, steps).round().astype(int)
    return [int(t) for t in ts[::-1]]


def _coef(values, like):
    """Broadcastable per-sample coefficient tensor matching ``like``."""
    c = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=like.dtype,
                        device=like.device)
    if c.dim() == 0:
        return c
    return c.reshape(-1, *([1] * (like.dim() - 1)))


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float32))


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def _steps(t):
    if isinstance(t, torch.Tensor):
        return t.detach().cpu().numpy()
    return t


def forward_diffuse(x0, t, eps, sched):
    x0, eps = _as_tensor(x0), _as_tensor(eps)
    _check_same(x0, eps, "forward_diffuse")
    t = _steps(t)
    sched.check_step(t)
    g = sched.gamma(t)
    return _coef(np.sqrt(g), x0) * x0 + _coef(np.sqrt(1.0 - g), x0) * eps


def approx_x0(x_t, eps_hat, t, sched):
    """Clean-image estimate implied by predicted noise. Not clamped."""
    x_t, eps_hat = _as_tensor(x_t), _as_tensor(eps_hat)
    _check_same(x_t, eps_hat, "approx_x0")
    t = _steps(t)
    sched.check_step(t)
    g = sched.gamma(t)
    return (x_t - _coef(np.sqrt(1.0 - g), x_t) * eps_hat) / _coef(np.sqrt(g), x_t)


def posterior_mean(x_t, eps_hat, t, sched):
    x_t, eps_hat = _as_tensor(x_t), _as_tensor(eps_hat)
    _check_same(x_t, eps_hat, "posterior_mean")
    t = _steps(t)
    sched.check_step(t)
    a, g = sched.alpha(t), sched.gamma(t)
    scale = (1.0 - a) / np.sqrt(1.0 - g)
    return (x_t - _coef(scale, x_t) * eps_hat) / _coef(np.sqrt(a), x_t)


def ddim_step(x_t, x0_hat, t, t_prev, sched):
    """Deterministic (eta = 0) jump from ``t`` to ``t_prev`` given an x0 estimate."""
    x_t, x0_hat = _as_tensor(x_t), _as_tensor(x0_hat)
    _check_same(x_t, x0_hat, "ddim_step")
    if t_prev >= t:
        raise OrderingError(f"t_prev={t_prev} must be smaller than t={t}")
    if t_prev < 0:
        raise ParameterError(f"t_prev must be >= 0, got {t_prev}")
    sched.check_step(t)
    if t_prev == 0:
        return x0_hat.clone()
    g, gp = sched.gamma(t), sched.gamma(t_prev)
    eps = (x_t - _coef(np.sqrt(g), x_t) * x0_hat) / _coef(np.sqrt(1.0 - g), x_t)
    return _coef(np.sqrt(gp), x_t) * x0_hat + _coef(np.sqrt(1.0 - gp), x_t) * eps
