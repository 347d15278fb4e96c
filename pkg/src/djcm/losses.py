"""Training losses: waveform MAE, class-weighted BCE over pitch bins, and the
joint objective omega * L_sep + (2 - omega) * L_pitch.

All functions accept single examples or batches and mask zero-padded tails:
MAE averages over the first `valid_length` samples per item, the weighted BCE
averages over valid frames only.
"""

from dataclasses import dataclass

import torch

from .errors import ConfigurationError, InvalidInputError

PROB_EPS = 1e-7


@dataclass
class LossConfig:
    alpha: float = 10.0
    omega: float = 1.8
    mask_padding: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.omega <= 2.0:
            raise ConfigurationError(f"omega must lie in [0, 2], got {self.omega}")


def _as_batch(x: torch.Tensor, ndim: int) -> torch.Tensor:
    if x.dim() == ndim - 1:
        return x.unsqueeze(0)
    if x.dim() == ndim:
        return x
    raise InvalidInputError(f"expected {ndim - 1}- or {ndim}-dim tensor, got {x.dim()}-dim")


def mae_loss(target: torch.Tensor, prediction: torch.Tensor, valid_length=None) -> torch.Tensor:
    """Mean absolute error over the valid prefix of each waveform.

    Args:
        target, prediction: (L,) or (B, L) waveforms of equal shape.
        valid_length: samples to include per item (int or (B,) tensor);
            defaults to the full length.

    Returns a scalar tensor: per-item mean over its valid samples, averaged
    over the batch.
    """
    if target.shape != prediction.shape:
        raise InvalidInputError(f"waveform shape mismatch {tuple(target.shape)} vs {tuple(prediction.shape)}")
    t = _as_batch(target, 2)
    p = _as_batch(prediction, 2)
    n = t.shape[-1]
    if valid_length is None:
        valid = torch.full((t.shape[0],), n, device=t.device)
    else:
        valid = torch.as_tensor(valid_length, device=t.device).reshape(-1)
        if valid.numel() == 1:
            valid = valid.expand(t.shape[0])
    if bool((valid > n).any()) or bool((valid <= 0).any()):
        raise InvalidInputError("valid_length must lie in [1, waveform length]")
    mask = torch.arange(n, device=t.device).unsqueeze(0) < valid.unsqueeze(1)
    abs_err = (t - p).abs() * mask
    per_item = abs_err.sum(dim=-1) / valid.to(abs_err.dtype)
    return per_item.mean()


def weighted_bce(target: torch.Tensor, prediction: torch.Tensor, valid_frames=None,
                 alpha: float = 10.0) -> torch.Tensor:
    """Class-weighted binary cross-entropy over pitch activations.

    Per frame: -sum_bins(alpha * y * log(p) + (1 - y) * log(1 - p)), with
    predictions clamped to [eps, 1-eps]. Returns the mean over all valid
    frames in the batch.

    Args:
        target: (T, 360) or (B, T, 360) one-hot-or-zero rows.
        prediction: same shape, entries in [0, 1].
        valid_frames: frames to include per item (int or (B,) tensor).
        alpha: weight on the positive (one-hot) bin.
    """
    if target.shape != prediction.shape:
        raise InvalidInputError(f"activation shape mismatch {tuple(target.shape)} vs {tuple(prediction.shape)}")
    y = _as_batch(target, 3)
    p = _as_batch(prediction, 3)
    if bool((p < 0).any()) or bool((p > 1).any()):
        raise InvalidInputError("predicted activations must lie in [0, 1]")
    n_frames = y.shape[1]
    if valid_frames is None:
        valid = torch.full((y.shape[0],), n_frames, device=y.device)
    else:
        valid = torch.as_tensor(valid_frames, device=y.device).reshape(-1)
        if valid.numel() == 1:
            valid = valid.expand(y.shape[0])
    if bool((valid > n_frames).any()) or bool((valid < 0).any()):
        raise InvalidInputError("valid_frames must lie in [0, n_frames]")

    p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    per_frame = -(alpha * y * torch.log(p) + (1.0 - y) * torch.log1p(-p)).sum(dim=-1)
    mask = torch.arange(n_frames, device=y.device).unsqueeze(0) < valid.unsqueeze(1)
    total_valid = mask.sum()
    if total_valid == 0:
        raise InvalidInputError("no valid frames to average over")
    return (per_frame * mask).sum() / total_valid.to(per_frame.dtype)


def joint_loss(loss_sep, loss_pitch, omega: float = 1.8):
    """omega * separation loss + (2 - omega) * pitch loss; weights sum to 2.

    The combination runs in float64 so a logged total can be reproduced
    exactly from the logged parts; gradients still reach float32 parameters.
    """
    if not 0.0 <= omega <= 2.0:
        raise ConfigurationError(f"omega must lie in [0, 2], got {omega}")
    if isinstance(loss_sep, torch.Tensor):
        return omega * loss_sep.double() + (2.0 - omega) * loss_pitch.double()
    return omega * loss_sep + (2.0 - omega) * loss_pitch
