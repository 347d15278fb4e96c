import numpy as np
import pytest
import torch

from djcm import (ConfigurationError, EvalReport, LossConfig, NumericalAbort,
                  TrainConfig, build_variant, evaluate, load_checkpoint,
                  run_experiment, sweep_omega, train)
from djcm.data import segment_record
from djcm.model import ForwardOutput
from djcm.training import moving_average

from conftest import make_toy_record


def _tiny_cfg(**overrides):
    kw = dict(epochs=2, batch_size=8, segment_samples=256, seed=7)
    kw.update(overrides)
    return TrainConfig(**kw)


class TestTrainLoop:
    def test_lr_schedule_recorded_in_history(self, toy_model_cfg):
        model = build_variant(toy_model_cfg())
        result = train(model, [make_toy_record(0)], _tiny_cfg(epochs=11))
        for entry in result.epoch_history:
            expected = 5e-4 * 0.95 ** (entry["epoch"] // 5)
            assert entry["lr"] == pytest.approx(expected, rel=1e-12)
        assert result.epoch_history[4]["lr"] == 5e-4
        assert result.epoch_history[5]["lr"] == 5e-4 * 0.95  # 4.75e-4 boundary
        assert result.epoch_history[10]["lr"] == pytest.approx(5e-4 * 0.95 ** 2)

    def test_logged_total_decomposes_exactly(self, toy_model_cfg):
        model = build_variant(toy_model_cfg())
        cfg = _tiny_cfg(loss=LossConfig(omega=0.7))
        result = train(model, [make_toy_record(1)], cfg)
        assert result.step_records
        for rec in result.step_records:
            recombined = 0.7 * rec["loss_sep"] + 1.3 * rec["loss_pitch"]
            assert abs(rec["loss"] - recombined) < 1e-7

    def test_single_task_totals_are_the_bare_losses(self, toy_model_cfg):
        svs = build_variant(toy_model_cfg(variant="single_svs"))
        result = train(svs, [make_toy_record(2)], _tiny_cfg(epochs=1))
        for rec in result.step_records:
            assert rec["loss_pitch"] is None
            assert rec["loss"] == rec["loss_sep"]

        vpe = build_variant(toy_model_cfg(variant="single_vpe"))
        result = train(vpe, [make_toy_record(2)], _tiny_cfg(epochs=1))
        for rec in result.step_records:
            assert rec["loss_sep"] is None
            assert rec["loss"] == rec["loss_pitch"]

    def test_epoch_history_averages_step_losses(self, toy_model_cfg):
        model = build_variant(toy_model_cfg())
        records = [make_toy_record(3), make_toy_record(4)]  # 8 segments
        result = train(model, records, _tiny_cfg(batch_size=4, epochs=2))
        steps_per_epoch = 2
        for entry in result.epoch_history:
            chunk = result.step_records[entry["epoch"] * steps_per_epoch:
                                        (entry["epoch"] + 1) * steps_per_epoch]
            assert entry["loss"] == pytest.approx(np.mean([r["loss"] for r in chunk]))

    def test_nan_loss_aborts_with_diagnostics(self, toy_model_cfg):
        class PoisonedModel(torch.nn.Module):
            def __init__(self, config):
                super().__init__()
                self.config = config
                self.gain = torch.nn.Parameter(torch.ones(()))

            def forward(self, spec, n_samples):
                b, t = spec.shape[0], spec.shape[1]
                wave = torch.full((b, n_samples), float("nan")) * self.gain
                act = torch.sigmoid(torch.zeros(b, t, 360)) * self.gain
                return ForwardOutput(vocals_waveform=wave, vocals_magnitude=None,
                                     pitch_activation=act)

        model = PoisonedModel(toy_model_cfg())
        with pytest.raises(NumericalAbort) as exc_info:
            train(model, [make_toy_record(5)], _tiny_cfg())
        abort = exc_info.value
        assert abort.step == 0
        assert abort.lr == 5e-4
        assert abort.batch_ids == ["toy_5"] * 4

    def test_checkpoint_written_per_epoch_and_roundtrips(self, tmp_path, toy_model_cfg):
        path = tmp_path / "model.ckpt"
        seen = []

        real_save = torch.save

        def counting_save(*args, **kwargs):
            seen.append(1)
            return real_save(*args, **kwargs)

        torch.save = counting_save
        try:
            model, _, report = run_experiment(
                [make_toy_record(6)], [make_toy_record(6)],
                toy_model_cfg(), _tiny_cfg(epochs=3), checkpoint_path=path)
        finally:
            torch.save = real_save
        assert len(seen) == 3  # one write per epoch

        loaded, extra = load_checkpoint(path)
        assert len(extra["epoch_history"]) == 3
        assert extra["train_config"]["epochs"] == 3
        report_again = evaluate(loaded, [make_toy_record(6)], segment_samples=256)
        assert report_again == report

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(lr=-1.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(lr_decay=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(batch_size=0)
        cfg = TrainConfig(loss={"omega": 1.0, "alpha": 10.0, "mask_padding": True})
        assert isinstance(cfg.loss, LossConfig) and cfg.loss.omega == 1.0


class TestDeterminism:
    def test_repeated_experiments_are_identical(self, toy_model_cfg):
        records = [make_toy_record(1), make_toy_record(2, hz=330.0)]
        args = (records, records, toy_model_cfg(), _tiny_cfg())
        m1, r1, rep1 = run_experiment(*args)
        m2, r2, rep2 = run_experiment(*args)
        assert r1.step_losses == r2.step_losses
        assert rep1 == rep2
        s1, s2 = m1.state_dict(), m2.state_dict()
        assert s1.keys() == s2.keys()
        for key in s1:
            assert torch.equal(s1[key], s2[key]), key


def _exact_record(seed: int, n_samples: int = 512) -> "SongRecord":
    """Stems representable exactly in float32, so a perfect estimate hits the
    +inf SDR sentinel after the float32 batch path."""
    from djcm import AudioClip, PitchTrack, SongRecord

    rng = np.random.default_rng(seed)
    hop = 32
    n_frames = n_samples // hop + 1
    hz = np.where(rng.random(n_frames) < 0.7, 220.0, 0.0)
    vocals = (0.1 * rng.standard_normal(n_samples)).astype(np.float32).astype(np.float64)
    accompaniment = (0.1 * rng.standard_normal(n_samples)).astype(np.float32).astype(np.float64)
    return SongRecord(
        song_id=f"exact_{seed}",
        mixture=AudioClip(vocals + accompaniment, 16000),
        vocals=AudioClip(vocals, 16000),
        accompaniment=AudioClip(accompaniment, 16000),
        pitch_labels=PitchTrack(hz, hop_seconds=hop / 16000.0),
    )


class _QueuedOracle(torch.nn.Module):
    """Ignores its input and plays back queued ground-truth segments."""

    def __init__(self, config, records, segment_samples):
        super().__init__()
        self.config = config
        self._unused = torch.nn.Parameter(torch.zeros(()))
        self.queue = []
        for rec in records:
            self.queue.extend(segment_record(rec, segment_samples,
                                             hop=config.stft.hop))

    def forward(self, spec, n_samples):
        chunk = [self.queue.pop(0) for _ in range(spec.shape[0])]
        return ForwardOutput(
            vocals_waveform=torch.from_numpy(np.stack([c["vocals"] for c in chunk])),
            vocals_magnitude=None,
            pitch_activation=torch.from_numpy(np.stack([c["target"] for c in chunk])),
        )


class _SilenceModel(torch.nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self._unused = torch.nn.Parameter(torch.zeros(()))

    def forward(self, spec, n_samples):
        b, t = spec.shape[0], spec.shape[1]
        return ForwardOutput(vocals_waveform=torch.zeros(b, n_samples),
                             vocals_magnitude=None,
                             pitch_activation=torch.zeros(b, t, 360))


class TestEvaluate:
    def test_oracle_model_hits_the_upper_bound(self, toy_model_cfg):
        records = [_exact_record(0), _exact_record(1)]
        model = _QueuedOracle(toy_model_cfg(), records, segment_samples=256)
        with pytest.warns(UserWarning, match="gnsdr"):
            report = evaluate(model, records, segment_samples=256)
        assert report.sdr == float("inf")
        assert report.gnsdr is None  # every per-song NSDR is +inf
        assert report.rpa == 1.0 and report.rca == 1.0 and report.oa == 1.0
        for entry in report.per_song:
            assert entry["sdr"] == float("inf")

    def test_silence_model_oa_is_unvoiced_fraction(self, toy_model_cfg):
        records = [_exact_record(3), _exact_record(4)]
        model = _SilenceModel(toy_model_cfg())
        report = evaluate(model, records, segment_samples=256)
        fractions = [np.mean(r.pitch_labels.frequencies == 0.0) for r in records]
        assert report.oa == pytest.approx(np.mean(fractions))
        assert report.rpa == 0.0
        assert report.sdr == 0.0  # zero-estimate convention

    def test_aggregates_match_per_song_table(self, toy_model_cfg):
        torch.manual_seed(0)
        model = build_variant(toy_model_cfg()).eval()
        records = [make_toy_record(7, n_samples=512),
                   make_toy_record(8, n_samples=768, hz=330.0)]
        report = evaluate(model, records, segment_samples=256)
        sdrs = [e["sdr"] for e in report.per_song]
        assert min(sdrs) <= report.sdr <= max(sdrs)
        assert report.sdr == pytest.approx(np.mean(sdrs))
        weighted = sum(e["length"] * e["nsdr"] for e in report.per_song) \
            / sum(e["length"] for e in report.per_song)
        assert report.gnsdr == pytest.approx(weighted)
        for name in ("rpa", "rca", "oa"):
            values = [e[name] for e in report.per_song]
            assert min(values) <= getattr(report, name) <= max(values)
            assert getattr(report, name) == pytest.approx(np.mean(values))

    def test_failing_song_excluded_with_warning(self, toy_model_cfg):
        torch.manual_seed(0)
        model = build_variant(toy_model_cfg()).eval()
        silent = make_toy_record(9, n_samples=512)
        silent.pitch_labels.frequencies[:] = 0.0  # RPA undefined for this song
        good = make_toy_record(10, n_samples=512)
        with pytest.warns(UserWarning, match=silent.song_id):
            report = evaluate(model, [silent, good], segment_samples=256)
        assert report.n_songs == 2
        bad_entry = report.per_song[0]
        assert "error" in bad_entry and "rpa" not in bad_entry
        good_entry = report.per_song[1]
        assert report.rpa == good_entry["rpa"]

    def test_report_json_roundtrip(self, toy_model_cfg):
        torch.manual_seed(1)
        model = build_variant(toy_model_cfg()).eval()
        report = evaluate(model, [make_toy_record(11, n_samples=512)],
                          segment_samples=256)
        back = EvalReport.from_json(report.to_json())
        assert back == report
        assert "sdr" in report.summary()


class TestSweep:
    def test_sweep_produces_one_row_per_omega(self, toy_model_cfg):
        records = [make_toy_record(12)]
        rows = sweep_omega(records, records, toy_model_cfg(),
                           _tiny_cfg(epochs=1), omegas=[1.0, 0.5])
        assert [w for w, _ in rows] == [1.0, 0.5]
        for _, report in rows:
            assert report.n_songs == 1
            assert report.config == rows[0][1].config  # same model config snapshot


class TestMovingAverage:
    def test_hand_case(self):
        out = moving_average([3.0, 1.0, 2.0], window=2)
        assert out.tolist() == [2.0, 1.5]
        assert moving_average([5.0, 7.0], window=1).tolist() == [5.0, 7.0]

    @pytest.mark.parametrize("window", [0, 4, -1])
    def test_bad_window(self, window):
        with pytest.raises(ValueError):
            moving_average([1.0, 2.0, 3.0], window=window)
