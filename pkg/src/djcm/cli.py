"""Command-line interface.

Subcommands: synth (write a synthetic corpus), train, separate, pitch,
evaluate, sweep. Config overrides are flat ``--set section.key=value`` pairs
routed into the model/train/loss dataclasses; unknown keys are rejected.

Exit codes: 0 success, 2 bad usage or configuration, 3 data or input problem,
4 numerical abort during training.
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .audio import SAMPLE_RATE, AudioClip
from .data import load_mir1k, records_by_id, split, synth_dataset, write_corpus
from .errors import (ConfigurationError, DataError, InvalidInputError,
                     NumericalAbort, UndefinedMetricError)
from .losses import LossConfig
from .model import ModelConfig, load_checkpoint
from .pitch import FRAME_SECONDS, decode_activation
from .training import (EvalReport, TrainConfig, evaluate, run_experiment,
                       sweep_omega)


def _parse_value(raw: str):
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    if "," in raw:
        return tuple(_parse_value(part) for part in raw.split(","))
    return raw


def _apply_overrides(pairs, model_kwargs, train_kwargs, loss_kwargs):
    sections = {"model": (model_kwargs, ModelConfig),
                "train": (train_kwargs, TrainConfig),
                "loss": (loss_kwargs, LossConfig)}
    for pair in pairs or []:
        if "=" not in pair or "." not in pair.split("=", 1)[0]:
            raise ConfigurationError(f"override {pair!r} is not section.key=value")
        key, raw = pair.split("=", 1)
        section, field_name = key.split(".", 1)
        if section not in sections:
            raise ConfigurationError(f"unknown config section {section!r}")
        kwargs, cls = sections[section]
        if field_name not in cls.__dataclass_fields__:
            raise ConfigurationError(f"unknown {section} option {field_name!r}")
        kwargs[field_name] = _parse_value(raw)


def _read_config_file(path) -> list:
    """Flat key=value config file: one section.key=value per line, # comments."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise ConfigurationError(f"no such config file: {path}") from None
    pairs = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            pairs.append(line)
    return pairs


def _build_configs(args) -> tuple[ModelConfig, TrainConfig]:
    """Resolve configs: defaults, then config file, then --set overrides."""
    pairs = []
    if getattr(args, "config", None):
        pairs.extend(_read_config_file(args.config))
    pairs.extend(getattr(args, "set", None) or [])
    model_kwargs, train_kwargs, loss_kwargs = {}, {}, {}
    _apply_overrides(pairs, model_kwargs, train_kwargs, loss_kwargs)
    if loss_kwargs:
        train_kwargs["loss"] = LossConfig(**loss_kwargs)
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)


def _write_resolved_config(out_dir: Path, model_cfg, train_cfg):
    payload = {"model": asdict(model_cfg), "train": asdict(train_cfg)}
    (out_dir / "config.json").write_text(json.dumps(payload, indent=2) + "\n")


def _read_mono_wav(path) -> AudioClip:
    try:
        sr, data = wavfile.read(path)
    except FileNotFoundError:
        raise InvalidInputError(f"no such file: {path}") from None
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if sr != SAMPLE_RATE:
        raise InvalidInputError(f"{path}: sample rate {sr}, expected {SAMPLE_RATE}")
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:  # corpus files are accompaniment/vocal pairs: mix them
        data = data.sum(axis=1)
    return AudioClip(data, sr)


def _cmd_synth(args) -> int:
    records = synth_dataset(n_songs=args.songs, seconds=args.seconds,
                            seed=args.seed, snr_db=args.snr_db)
    write_corpus(records, args.out)
    print(f"wrote {len(records)} songs to {args.out}")
    return 0


def _cmd_train(args) -> int:
    model_cfg, train_cfg = _build_configs(args)
    records = load_mir1k(args.data, limit=args.limit)
    parts = split(records, train_fraction=args.train_fraction, seed=train_cfg.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(out_dir, model_cfg, train_cfg)
    _, result, report = run_experiment(
        records_by_id(records, parts.train), records_by_id(records, parts.test),
        model_cfg, train_cfg, checkpoint_path=out_dir / "model.ckpt", log=print)
    (out_dir / "history.json").write_text(
        json.dumps(result.epoch_history, indent=2) + "\n")
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    print(report.summary())
    return 0


def _cmd_separate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    clip = _read_mono_wav(args.input)
    clip.validate()
    import torch
    with torch.no_grad():
        out = model.forward_waveform(torch.from_numpy(clip.samples))
    if out.vocals_waveform is None:
        raise InvalidInputError(
            f"variant {model.config.variant!r} does not produce a waveform")
    wavfile.write(args.output, SAMPLE_RATE,
                  out.vocals_waveform.numpy().astype(np.float32))
    print(f"wrote {args.output}")
    return 0


def _cmd_pitch(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    clip = _read_mono_wav(args.input)
    clip.validate()
    import torch
    with torch.no_grad():
        out = model.forward_waveform(torch.from_numpy(clip.samples))
    if out.pitch_activation is None:
        raise InvalidInputError(
            f"variant {model.config.variant!r} does not estimate pitch")
    track = decode_activation(out.pitch_activation.numpy(),
                              voicing_threshold=args.threshold)
    lines = [f"{i * FRAME_SECONDS:.3f}\t{f:.3f}\t{int(f > 0)}"
             for i, f in enumerate(track.frequencies)]
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_evaluate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    records = load_mir1k(args.data, limit=args.limit)
    report = evaluate(model, records)
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    print(report.summary())
    return 0


def _cmd_sweep(args) -> int:
    model_cfg, train_cfg = _build_configs(args)
    records = load_mir1k(args.data, limit=args.limit)
    parts = split(records, train_fraction=args.train_fraction, seed=train_cfg.seed)
    omegas = [float(w) for w in args.omegas.split(",")]
    rows = sweep_omega(records_by_id(records, parts.train),
                       records_by_id(records, parts.test),
                       model_cfg, train_cfg, omegas)
    print("omega\tsdr\tgnsdr\trpa\trca\toa")
    for w, rep in rows:
        note = "\t(naive joint learning)" if w == 1.0 else ""
        print(f"{w:.1f}\t" + "\t".join(
            EvalReport._fmt(x) for x in (rep.sdr, rep.gnsdr, rep.rpa, rep.rca, rep.oa)) + note)
    if args.json:
        out_path = Path(args.json)
        payload = [{"omega": w, "split": {"train": parts.train, "test": parts.test,
                                          "seed": parts.seed},
                    "report": json.loads(r.to_json())} for w, r in rows]
        out_path.write_text(json.dumps(payload, indent=2) + "\n")
        _write_resolved_config(out_path.parent, model_cfg, train_cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="djcm",
                                     description="joint vocal separation and pitch estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--songs", type=int, default=4)
    p.add_argument("--seconds", type=float, default=2.56)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--snr-db", type=float, default=0.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--config", default=None,
                   help="flat key=value config file, overridden by --set")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a model./train./loss. config field")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("separate", help="extract vocals from a mixture wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("pitch", help="estimate per-frame pitch from a wav")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None,
                   help="write 'seconds hz voiced' rows here instead of stdout")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=_cmd_pitch)

    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="rerun training across loss weights")
    p.add_argument("--data", required=True)
    p.add_argument("--omegas", default="1.0,1.8")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--json", default=None)
    p.add_argument("--config", default=None,
                   help="flat key=value config file, overridden by --set")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, InvalidInputError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalAbort as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
