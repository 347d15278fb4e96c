"""Network architecture: separation and pitch modules built from residual
convolutional blocks, plus the ablation variants behind one forward interface.

Every variant consumes a complex mixture spectrogram (B, T, F) and returns a
ForwardOutput; frequency is halved by each encoder block and doubled back by
each decoder block, while the time axis is preserved throughout.
"""

import re
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import StftConfig, istft_tensor, stft_tensor
from .errors import ConfigurationError, InvalidInputError

CHECKPOINT_MAGIC = "DJCM-CKPT-v1"

VARIANTS = ("djcm", "single_svs", "single_vpe", "shared_bottom")
_MMOE_RE = re.compile(r"^mmoe_(\d+)$")

# Desk-scale widths sized so a 200-step run fits a single CPU core's budget;
# full_scale() restores capacity for accelerator training.
DEFAULT_CHANNELS = (1, 1, 2, 4, 8, 16)
FULL_SCALE_CHANNELS = (16, 32, 64, 128, 256, 384)


@dataclass
class ModelConfig:
    """Architecture hyperparameters shared by all variants."""

    encoder_channels: tuple = DEFAULT_CHANNELS
    freq_bins_in: int = 1024
    gru_hidden: int = 192
    n_pitch_bins: int = 360
    variant: str = "djcm"
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if isinstance(self.stft, dict):
            self.stft = StftConfig(**self.stft)
        if not self.encoder_channels:
            raise ConfigurationError("encoder_channels must not be empty")
        depth = len(self.encoder_channels)
        if self.freq_bins_in % (2 ** depth) != 0:
            raise ConfigurationError(
                f"freq_bins_in {self.freq_bins_in} not divisible by 2^{depth}")
        if self.freq_bins_in != self.stft.n_fft // 2:
            raise ConfigurationError(
                f"freq_bins_in {self.freq_bins_in} must equal n_fft/2 = {self.stft.n_fft // 2}")
        if self.gru_hidden < 1 or self.n_pitch_bins < 1:
            raise ConfigurationError("gru_hidden and n_pitch_bins must be positive")
        if self.variant not in VARIANTS and not _MMOE_RE.match(self.variant):
            raise ConfigurationError(f"unknown variant {self.variant!r}")

    @property
    def n_experts(self) -> int:
        m = _MMOE_RE.match(self.variant)
        if not m:
            raise ConfigurationError(f"variant {self.variant!r} has no experts")
        n = int(m.group(1))
        if n < 1:
            raise ConfigurationError("mmoe needs at least one expert")
        return n

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Capacity intended for full-corpus training on an accelerator."""
        overrides.setdefault("encoder_channels", FULL_SCALE_CHANNELS)
        overrides.setdefault("gru_hidden", 256)
        return cls(**overrides)


@dataclass
class ForwardOutput:
    """Model outputs; fields are None where a variant does not produce them."""

    vocals_waveform: torch.Tensor | None  # (B, L)
    vocals_magnitude: torch.Tensor | None  # (B, T, F)
    pitch_activation: torch.Tensor | None  # (B, T, n_bins), sigmoid outputs


class ResidualConvBlock(nn.Module):
    """Two pre-activation 3x3 convolutions with a shortcut from input to output.

    The shortcut is the identity when channel counts match, a 1x1 convolution
    otherwise. Spatial shape is preserved.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_channels)
        self.act1 = nn.PReLU(in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.act2 = nn.PReLU(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels == out_channels:
            self.shortcut = nn.Identity()
        else:
            self.shortcut = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        y = self.conv1(self.act1(self.bn1(x)))
        y = self.conv2(self.act2(self.bn2(y)))
        return y + self.shortcut(x)


class ResidualEncoderBlock(nn.Module):
    """Residual block followed by a 1x2 max-pool over frequency only."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.rcb = ResidualConvBlock(in_channels, out_channels)

    def forward(self, x):
        skip = self.rcb(x)
        if skip.shape[-1] % 2 != 0:
            raise InvalidInputError(f"frequency dim {skip.shape[-1]} must be even to pool")
        down = F.max_pool2d(skip, kernel_size=(1, 2))
        return skip, down


class ResidualDecoderBlock(nn.Module):
    """Transposed-conv frequency upsampling (x2), skip addition, residual block."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_channels, out_channels, 3, stride=(1, 2),
                                     padding=1, output_padding=(0, 1))
        self.rcb = ResidualConvBlock(out_channels, out_channels)

    def forward(self, x, skip):
        y = self.up(x)
        if y.shape != skip.shape:
            raise InvalidInputError(
                f"decoder feature shape {tuple(y.shape)} does not match skip {tuple(skip.shape)}")
        return self.rcb(y + skip)


class PerBinNorm(nn.Module):
    """Standardizes each frequency bin over batch and time before the first
    convolution.

    Linear magnitudes span several orders of magnitude, so a plain channel
    norm leaves harmonic peaks tens of deviations out; that saturates the
    sigmoid heads right where the energy is and freezes their gradients.
    Normalizing per bin keeps the active bins in a tame range.
    """

    def __init__(self, freq_bins: int):
        super().__init__()
        self.bn = nn.BatchNorm2d(freq_bins)

    def forward(self, x):  # (B, C, T, F)
        return self.bn(x.transpose(1, 3)).transpose(1, 3)


class Encoder(nn.Module):
    """Stack of residual encoder blocks; returns pre-pool skips and the
    bottleneck features after a final residual block."""

    def __init__(self, channels: tuple, in_channels: int = 1):
        super().__init__()
        blocks = []
        prev = in_channels
        for c in channels:
            blocks.append(ResidualEncoderBlock(prev, c))
            prev = c
        self.blocks = nn.ModuleList(blocks)
        self.bottom = ResidualConvBlock(channels[-1], channels[-1])

    def forward(self, x):
        skips = []
        for block in self.blocks:
            skip, x = block(x)
            skips.append(skip)
        return skips, self.bottom(x)


class Decoder(nn.Module):
    """Stack of residual decoder blocks consuming encoder skips in reverse."""

    def __init__(self, channels: tuple):
        super().__init__()
        rev = list(reversed(channels))
        ins = [rev[0]] + rev[:-1]
        self.blocks = nn.ModuleList(
            ResidualDecoderBlock(i, o) for i, o in zip(ins, rev))

    def forward(self, x, skips):
        for block, skip in zip(self.blocks, reversed(skips)):
            x = block(x, skip)
        return x


class MaskHead(nn.Module):
    """Decoder ending in a 1x1 convolution and sigmoid ratio mask."""

    def __init__(self, channels: tuple):
        super().__init__()
        self.decoder = Decoder(channels)
        self.post = ResidualConvBlock(channels[0], channels[0])
        self.out_conv = nn.Conv2d(channels[0], 1, 1)

    def forward(self, x, skips):
        y = self.post(self.decoder(x, skips))
        return torch.sigmoid(self.out_conv(y)).squeeze(1)  # (B, T, F_in)


class PitchHead(nn.Module):
    """Decoder whose per-frame features feed a bidirectional GRU and a
    fully connected sigmoid layer over the pitch bins."""

    def __init__(self, channels: tuple, freq_bins_in: int, gru_hidden: int, n_bins: int):
        super().__init__()
        self.decoder = Decoder(channels)
        self.post = ResidualConvBlock(channels[0], channels[0])
        self.gru = nn.GRU(channels[0] * freq_bins_in, gru_hidden,
                          batch_first=True, bidirectional=True)
        self.fc = nn.Linear(2 * gru_hidden, n_bins)

    def forward(self, x, skips):
        y = self.post(self.decoder(x, skips))
        b, c, t, f = y.shape
        frames = y.permute(0, 2, 1, 3).reshape(b, t, c * f)
        h, _ = self.gru(frames)
        return torch.sigmoid(self.fc(h))  # (B, T, n_bins)


def _crop(mag: torch.Tensor, freq_bins_in: int) -> torch.Tensor:
    if mag.shape[-1] == freq_bins_in + 1:
        return mag[..., :freq_bins_in]
    if mag.shape[-1] == freq_bins_in:
        return mag
    raise InvalidInputError(
        f"expected {freq_bins_in} or {freq_bins_in + 1} frequency bins, got {mag.shape[-1]}")


class SeparationModule(nn.Module):
    """Mixture spectrogram -> vocal magnitude and waveform via a sigmoid mask.

    The Nyquist bin is cropped before the network and restored afterwards by
    reusing the mask of the highest retained bin; the mixture phase is reused
    for synthesis.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.freq_bins_in = cfg.freq_bins_in
        self.stft_config = cfg.stft
        self.input_norm = PerBinNorm(cfg.freq_bins_in)
        self.encoder = Encoder(cfg.encoder_channels)
        self.mask_head = MaskHead(cfg.encoder_channels)

    def compute_mask(self, mag: torch.Tensor) -> torch.Tensor:
        x = self.input_norm(_crop(mag, self.freq_bins_in).unsqueeze(1))
        skips, bottom = self.encoder(x)
        mask = self.mask_head(bottom, skips)
        return torch.cat([mask, mask[..., -1:]], dim=-1)

    def forward(self, spec: torch.Tensor, length: int):
        mag = spec.abs()
        mask = self.compute_mask(mag)
        vocal_mag = mask * mag
        unit_phase = spec / mag.clamp(min=1e-8)
        wave = istft_tensor(vocal_mag * unit_phase, length, self.stft_config)
        return vocal_mag, wave


class PitchModule(nn.Module):
    """Vocal (or mixture) magnitude -> (B, T, n_bins) pitch activation."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.freq_bins_in = cfg.freq_bins_in
        self.input_norm = PerBinNorm(cfg.freq_bins_in)
        self.encoder = Encoder(cfg.encoder_channels)
        self.head = PitchHead(cfg.encoder_channels, cfg.freq_bins_in,
                              cfg.gru_hidden, cfg.n_pitch_bins)

    def forward(self, mag: torch.Tensor):
        x = self.input_norm(_crop(mag, self.freq_bins_in).unsqueeze(1))
        skips, bottom = self.encoder(x)
        return self.head(bottom, skips)


class _VariantBase(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg

    def _use_channels_last(self):
        # Conv backward on CPU is several times faster in NHWC (oneDNN) than
        # in the default layout; every variant adopts it at construction so
        # training fits its wall-clock budget regardless of entry point.
        self.to(memory_format=torch.channels_last)

    def forward_waveform(self, wave: torch.Tensor) -> ForwardOutput:
        """Convenience wrapper: (B, L) or (L,) waveform in, ForwardOutput out."""
        squeeze = wave.dim() == 1
        if squeeze:
            wave = wave.unsqueeze(0)
        wave = wave.to(next(self.parameters()).dtype)
        out = self(stft_tensor(wave, self.config.stft), wave.shape[-1])
        if squeeze:
            out = ForwardOutput(
                None if out.vocals_waveform is None else out.vocals_waveform.squeeze(0),
                None if out.vocals_magnitude is None else out.vocals_magnitude.squeeze(0),
                None if out.pitch_activation is None else out.pitch_activation.squeeze(0))
        return out


class CascadeModel(_VariantBase):
    """Separation module followed by a pitch module reading its predicted
    magnitude; trained end to end, so pitch gradients reach the separator."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.separation = SeparationModule(cfg)
        self.pitch = PitchModule(cfg)
        self._use_channels_last()

    def forward(self, spec, length):
        vocal_mag, wave = self.separation(spec, length)
        activation = self.pitch(vocal_mag)
        return ForwardOutput(wave, vocal_mag, activation)


class SingleSeparationModel(_VariantBase):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.separation = SeparationModule(cfg)
        self._use_channels_last()

    def forward(self, spec, length):
        vocal_mag, wave = self.separation(spec, length)
        return ForwardOutput(wave, vocal_mag, None)


class SinglePitchModel(_VariantBase):
    """Pitch module reading the mixture spectrogram directly."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.pitch = PitchModule(cfg)
        self._use_channels_last()

    def forward(self, spec, length):
        return ForwardOutput(None, None, self.pitch(spec.abs()))


class SharedBottomModel(_VariantBase):
    """One shared encoder feeding both task heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.freq_bins_in = cfg.freq_bins_in
        self.stft_config = cfg.stft
        self.input_norm = PerBinNorm(cfg.freq_bins_in)
        self.encoder = Encoder(cfg.encoder_channels)
        self.mask_head = MaskHead(cfg.encoder_channels)
        self.pitch_head = PitchHead(cfg.encoder_channels, cfg.freq_bins_in,
                                    cfg.gru_hidden, cfg.n_pitch_bins)
        self._use_channels_last()

    def forward(self, spec, length):
        mag = spec.abs()
        x = self.input_norm(_crop(mag, self.freq_bins_in).unsqueeze(1))
        skips, bottom = self.encoder(x)
        mask = self.mask_head(bottom, skips)
        mask = torch.cat([mask, mask[..., -1:]], dim=-1)
        vocal_mag = mask * mag
        wave = istft_tensor(vocal_mag * (spec / mag.clamp(min=1e-8)), length, self.stft_config)
        activation = self.pitch_head(bottom, skips)
        return ForwardOutput(wave, vocal_mag, activation)


class MixtureOfExpertsModel(_VariantBase):
    """n expert encoders whose features are mixed by per-task softmax gates.

    Gates produce per-frame weights over experts (summing to 1 at every
    position); each task head consumes its own mixture of expert bottleneck
    features and skips.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.freq_bins_in = cfg.freq_bins_in
        self.stft_config = cfg.stft
        self.input_norm = PerBinNorm(cfg.freq_bins_in)
        self.experts = nn.ModuleList(
            Encoder(cfg.encoder_channels) for _ in range(cfg.n_experts))
        self.gate_sep = nn.Conv2d(1, cfg.n_experts, 1)
        self.gate_pitch = nn.Conv2d(1, cfg.n_experts, 1)
        self.mask_head = MaskHead(cfg.encoder_channels)
        self.pitch_head = PitchHead(cfg.encoder_channels, cfg.freq_bins_in,
                                    cfg.gru_hidden, cfg.n_pitch_bins)
        self._use_channels_last()

    def gate_weights(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-task gate weights of shape (B, n_experts, T), softmax over experts."""
        w_sep = torch.softmax(self.gate_sep(x).mean(dim=-1), dim=1)
        w_pitch = torch.softmax(self.gate_pitch(x).mean(dim=-1), dim=1)
        return w_sep, w_pitch

    @staticmethod
    def _mix(tensors: list[torch.Tensor], weights: torch.Tensor) -> torch.Tensor:
        # tensors: per-expert (B, C, T, F); weights: (B, E, T)
        stacked = torch.stack(tensors, dim=1)  # (B, E, C, T, F)
        return (stacked * weights[:, :, None, :, None]).sum(dim=1)

    def forward(self, spec, length):
        mag = spec.abs()
        x = self.input_norm(_crop(mag, self.freq_bins_in).unsqueeze(1))
        expert_out = [expert(x) for expert in self.experts]
        w_sep, w_pitch = self.gate_weights(x)

        n_levels = len(self.config.encoder_channels)
        sep_skips = [self._mix([eo[0][i] for eo in expert_out], w_sep) for i in range(n_levels)]
        pitch_skips = [self._mix([eo[0][i] for eo in expert_out], w_pitch) for i in range(n_levels)]
        sep_bottom = self._mix([eo[1] for eo in expert_out], w_sep)
        pitch_bottom = self._mix([eo[1] for eo in expert_out], w_pitch)

        mask = self.mask_head(sep_bottom, sep_skips)
        mask = torch.cat([mask, mask[..., -1:]], dim=-1)
        vocal_mag = mask * mag
        wave = istft_tensor(vocal_mag * (spec / mag.clamp(min=1e-8)), length, self.stft_config)
        activation = self.pitch_head(pitch_bottom, pitch_skips)
        return ForwardOutput(wave, vocal_mag, activation)


def build_variant(cfg: ModelConfig) -> _VariantBase:
    """Construct the model for cfg.variant."""
    if cfg.variant == "djcm":
        return CascadeModel(cfg)
    if cfg.variant == "single_svs":
        return SingleSeparationModel(cfg)
    if cfg.variant == "single_vpe":
        return SinglePitchModel(cfg)
    if cfg.variant == "shared_bottom":
        return SharedBottomModel(cfg)
    if _MMOE_RE.match(cfg.variant):
        return MixtureOfExpertsModel(cfg)
    raise ConfigurationError(f"unknown variant {cfg.variant!r}")


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(path, model: _VariantBase, extra: dict | None = None):
    """Serialize parameters plus the full ModelConfig under a versioned magic."""
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[_VariantBase, dict]:
    """Rebuild a model from a checkpoint; returns (model, extra)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise InvalidInputError(f"no such checkpoint: {path}") from None
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
    cfg_dict = dict(payload["config"])
    cfg_dict["stft"] = StftConfig(**cfg_dict["stft"])
    cfg = ModelConfig(**cfg_dict)
    model = build_variant(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
