"""Training loop, evaluation report, experiment driver, and the loss-weight
sweep. Everything here is deterministic given its seeds and runs on CPU.
"""

import json
import random
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .audio import SEGMENT_SAMPLES, stft_tensor
from .data import SongRecord, make_batches
from .errors import (ConfigurationError, InvalidInputError, NumericalAbort,
                     UndefinedMetricError)
from .losses import LossConfig, joint_loss, mae_loss, weighted_bce
from .metrics import gnsdr, nsdr, pitch_score, sdr
from .model import ModelConfig, build_variant, save_checkpoint
from .pitch import PitchTrack, decode_activation


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 5e-4
    lr_decay: float = 0.95
    lr_decay_epochs: int = 5
    batch_size: int = 16
    segment_samples: int = SEGMENT_SAMPLES
    seed: int = 42
    shuffle: bool = True
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1 or self.lr_decay_epochs < 1:
            raise ConfigurationError("bad learning-rate schedule")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")


@dataclass
class TrainResult:
    epoch_history: list  # per-epoch dicts: epoch, loss, loss_sep, loss_pitch, lr
    step_records: list   # per-step dicts: step, lr, loss, loss_sep, loss_pitch

    @property
    def step_losses(self) -> list:
        return [rec["loss"] for rec in self.step_records]


def _variant_losses(out, batch, loss_cfg: LossConfig):
    """Return (loss_sep, loss_pitch, total) with None where not applicable."""
    valid_samples = batch["valid_samples"] if loss_cfg.mask_padding else None
    valid_frames = batch["valid_frames"] if loss_cfg.mask_padding else None
    l_sep = l_pitch = None
    if out.vocals_waveform is not None:
        l_sep = mae_loss(batch["vocals"], out.vocals_waveform, valid_samples)
    if out.pitch_activation is not None:
        l_pitch = weighted_bce(batch["target"], out.pitch_activation,
                               valid_frames, alpha=loss_cfg.alpha)
    if l_sep is not None and l_pitch is not None:
        total = joint_loss(l_sep, l_pitch, omega=loss_cfg.omega)
    else:
        total = l_sep if l_sep is not None else l_pitch
    return l_sep, l_pitch, total


def train(model, records: list[SongRecord], cfg: TrainConfig,
          checkpoint_path=None, log=None) -> TrainResult:
    """Optimize model on records with Adam and a stepped learning-rate decay.

    A non-finite total loss aborts immediately with the step, learning rate,
    and offending batch recorded on the exception.
    """
    torch.manual_seed(cfg.seed)
    stft_cfg = model.config.stft
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    epoch_history = []
    step_records = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        batches = make_batches(records, batch_size=cfg.batch_size,
                               segment_samples=cfg.segment_samples,
                               shuffle=cfg.shuffle, seed=cfg.seed + epoch,
                               stft_config=stft_cfg)
        sums = {"loss": 0.0, "loss_sep": 0.0, "loss_pitch": 0.0}
        for batch in batches:
            spec = stft_tensor(batch["mixture"], stft_cfg)
            out = model(spec, batch["mixture"].shape[-1])
            l_sep, l_pitch, total = _variant_losses(out, batch, cfg.loss)
            if not torch.isfinite(total):
                raise NumericalAbort(
                    f"non-finite loss {total.item()!r} at step {step}",
                    step=step, lr=lr, batch_ids=list(batch["song_ids"]))
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            record = {"step": step, "lr": lr, "loss": float(total.item()),
                      "loss_sep": float(l_sep.item()) if l_sep is not None else None,
                      "loss_pitch": float(l_pitch.item()) if l_pitch is not None else None}
            step_records.append(record)
            step += 1
            sums["loss"] += record["loss"]
            sums["loss_sep"] += record["loss_sep"] or 0.0
            sums["loss_pitch"] += record["loss_pitch"] or 0.0
        n = max(1, len(batches))
        entry = {"epoch": epoch, "lr": lr,
                 "loss": sums["loss"] / n,
                 "loss_sep": sums["loss_sep"] / n,
                 "loss_pitch": sums["loss_pitch"] / n}
        epoch_history.append(entry)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model,
                            extra={"epoch_history": epoch_history,
                                   "train_config": asdict(cfg)})
        if log is not None:
            log(f"epoch {epoch}: loss {entry['loss']:.5f} "
                f"(sep {entry['loss_sep']:.5f}, pitch {entry['loss_pitch']:.5f}, lr {lr:.2e})")
    model.eval()
    return TrainResult(epoch_history=epoch_history, step_records=step_records)


@dataclass
class EvalReport:
    """Aggregate evaluation scores; pitch or separation fields are None for
    variants that do not produce the corresponding output.

    ``sdr`` is the unweighted per-song mean, ``gnsdr`` the length-weighted
    aggregate. Equality ignores wall_clock_seconds so reports from repeated
    runs compare by content.
    """

    sdr: float | None
    gnsdr: float | None
    rpa: float | None
    rca: float | None
    oa: float | None
    n_songs: int
    per_song: list
    config: dict | None = None
    wall_clock_seconds: float = 0.0

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (self.sdr, self.gnsdr, self.rpa, self.rca, self.oa,
                self.n_songs, self.per_song, self.config) == \
               (other.sdr, other.gnsdr, other.rpa, other.rca, other.oa,
                other.n_songs, other.per_song, other.config)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def summary(self) -> str:
        """Flat metric -> value table, one line per aggregate."""
        pairs = [("songs", f"{self.n_songs}"), ("sdr", self._fmt(self.sdr)),
                 ("gnsdr", self._fmt(self.gnsdr)), ("rpa", self._fmt(self.rpa)),
                 ("rca", self._fmt(self.rca)), ("oa", self._fmt(self.oa))]
        return "\n".join(f"{k}\t{v}" for k, v in pairs)

    @staticmethod
    def _fmt(x) -> str:
        return "n/a" if x is None else f"{x:.4f}"


def _song_predictions(model, record: SongRecord, segment_samples: int,
                      batch_size: int):
    """Run the model over one song; returns (vocal_wave|None, activation|None)."""
    stft_cfg = model.config.stft
    hop = stft_cfg.hop
    batches = make_batches([record], batch_size=batch_size,
                           segment_samples=segment_samples, shuffle=False,
                           stft_config=stft_cfg)
    step_frames = segment_samples // hop
    waves, acts = [], []
    with torch.no_grad():
        for batch in batches:
            spec = stft_tensor(batch["mixture"], stft_cfg)
            out = model(spec, batch["mixture"].shape[-1])
            for i in range(len(batch["song_ids"])):
                ns = int(batch["valid_samples"][i])
                nf = int(batch["valid_frames"][i])
                if out.vocals_waveform is not None:
                    waves.append(out.vocals_waveform[i, :ns].numpy())
                if out.pitch_activation is not None:
                    acts.append((out.pitch_activation[i].numpy(), nf))
    wave = np.concatenate(waves) if waves else None
    activation = None
    if acts:
        rows = [a[:step_frames] for a, _ in acts[:-1]]
        last, nf = acts[-1]
        rows.append(last[:nf])
        activation = np.concatenate(rows, axis=0)
    return wave, activation


def evaluate(model, records: list[SongRecord],
             segment_samples: int = SEGMENT_SAMPLES,
             batch_size: int = 4) -> EvalReport:
    """Score a model over full songs.

    Separated waveforms are stitched from segments truncated to their valid
    samples; pitch activations are stitched the same way (the one-frame
    overlap between consecutive segments keeps the first copy). Pitch scores
    are averaged over songs, separation uses the length-weighted aggregate.
    """
    model.eval()
    start = time.perf_counter()
    per_song = []
    sdr_values = []
    nsdr_pairs = []
    pitch_rows = []
    for record in records:
        entry = {"song_id": record.song_id,
                 "length": len(record.mixture.samples)}
        try:
            wave, activation = _song_predictions(model, record, segment_samples, batch_size)
            if wave is not None:
                ref = record.vocals.samples
                entry["sdr"] = sdr(ref, wave)
                entry["nsdr"] = nsdr(ref, wave, record.mixture.samples)
                sdr_values.append(entry["sdr"])
                nsdr_pairs.append((entry["length"], entry["nsdr"]))
            if activation is not None:
                predicted = decode_activation(activation)
                n = min(len(predicted.frequencies), len(record.pitch_labels.frequencies))
                score = pitch_score(PitchTrack(record.pitch_labels.frequencies[:n]),
                                    PitchTrack(predicted.frequencies[:n]))
                entry.update(rpa=score.rpa, rca=score.rca, oa=score.oa)
                pitch_rows.append(score)
        except (UndefinedMetricError, InvalidInputError) as exc:
            warnings.warn(f"{record.song_id}: excluded from aggregates: {exc}")
            entry["error"] = str(exc)
        per_song.append(entry)

    gnsdr_value = None
    if nsdr_pairs:
        try:
            gnsdr_value = gnsdr(nsdr_pairs)
        except UndefinedMetricError as exc:
            warnings.warn(f"gnsdr aggregate undefined: {exc}")

    report = EvalReport(
        sdr=float(np.mean(sdr_values)) if sdr_values else None,
        gnsdr=gnsdr_value,
        rpa=float(np.mean([s.rpa for s in pitch_rows])) if pitch_rows else None,
        rca=float(np.mean([s.rca for s in pitch_rows])) if pitch_rows else None,
        oa=float(np.mean([s.oa for s in pitch_rows])) if pitch_rows else None,
        n_songs=len(records),
        per_song=per_song,
        config=json.loads(json.dumps(asdict(model.config))),
        wall_clock_seconds=time.perf_counter() - start,
    )
    return report


def run_experiment(train_records: list[SongRecord], eval_records: list[SongRecord],
                   model_cfg: ModelConfig, train_cfg: TrainConfig,
                   checkpoint_path=None, log=None):
    """Seed everything, build the variant, train, evaluate.

    Returns (model, TrainResult, EvalReport). Two calls with identical inputs
    produce identical parameters and reports.
    """
    random.seed(train_cfg.seed)
    np.random.seed(train_cfg.seed % 2 ** 32)
    torch.manual_seed(train_cfg.seed)
    model = build_variant(model_cfg)
    result = train(model, train_records, train_cfg,
                   checkpoint_path=checkpoint_path, log=log)
    report = evaluate(model, eval_records, segment_samples=train_cfg.segment_samples)
    return model, result, report


def sweep_omega(train_records, eval_records, model_cfg: ModelConfig,
                train_cfg: TrainConfig, omegas, log=None) -> list:
    """Re-run the experiment for each loss weight; returns [(omega, EvalReport)]."""
    rows = []
    for omega in omegas:
        loss_cfg = LossConfig(alpha=train_cfg.loss.alpha, omega=float(omega),
                              mask_padding=train_cfg.loss.mask_padding)
        cfg = TrainConfig(epochs=train_cfg.epochs, lr=train_cfg.lr,
                          lr_decay=train_cfg.lr_decay,
                          lr_decay_epochs=train_cfg.lr_decay_epochs,
                          batch_size=train_cfg.batch_size,
                          segment_samples=train_cfg.segment_samples,
                          seed=train_cfg.seed, shuffle=train_cfg.shuffle,
                          loss=loss_cfg)
        _, _, report = run_experiment(train_records, eval_records, model_cfg, cfg)
        if log is not None:
            log(f"omega={omega}: {report.summary()}")
        rows.append((float(omega), report))
    return rows


def moving_average(values, window: int) -> np.ndarray:
    """Trailing moving average; defined from index window-1 onwards."""
    arr = np.asarray(values, dtype=np.float64)
    if window < 1 or window > len(arr):
        raise ValueError(f"window {window} invalid for {len(arr)} values")
    kernel = np.ones(window) / window
    return np.convolve(arr, kernel, mode="valid")
