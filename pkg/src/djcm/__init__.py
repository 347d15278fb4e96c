"""Joint singing-voice separation and vocal pitch estimation."""

from .audio import (SAMPLE_RATE, SEGMENT_SAMPLES, AudioClip, Segment,
                    Spectrogram, StftConfig, istft, istft_tensor, segment,
                    stft, stft_tensor, unsegment)
from .data import (DatasetSplit, SongRecord, load_mir1k, make_batches,
                   records_by_id, segment_record, split, synth_dataset,
                   write_corpus)
from .errors import (ConfigurationError, DataError, InvalidInputError,
                     NumericalAbort, UndefinedMetricError)
from .losses import LossConfig, joint_loss, mae_loss, weighted_bce
from .metrics import (CENT_TOLERANCE, PitchScore, SeparationScore, gnsdr,
                      nsdr, oa, pitch_score, rca, rpa, sdr)
from .model import (CHECKPOINT_MAGIC, CascadeModel, ForwardOutput,
                    MixtureOfExpertsModel, ModelConfig, SharedBottomModel,
                    SinglePitchModel, SingleSeparationModel, build_variant,
                    count_parameters, load_checkpoint, save_checkpoint)
from .pitch import (N_BINS, PitchTrack, bin_center_cents, cents_to_hz,
                    decode_activation, encode_pitch, hz_to_cents,
                    hz_to_semitone, semitone_to_hz, semitones_to_track)
from .training import (EvalReport, TrainConfig, TrainResult, evaluate,
                       moving_average, run_experiment, sweep_omega, train)

__version__ = "0.1.0"
