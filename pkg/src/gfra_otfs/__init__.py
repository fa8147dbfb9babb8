"""Grant-free NOMA-OTFS uplink simulator for LEO satellite IoT access."""

from .channel import (ActivityPattern, ChannelRealization, ConstellationGeometry,
                      TerminalProfile, apply_channel, dd_cir_on_lattice,
                      doppler_from_geometry, draw_activity, draw_population)
from .config import ExperimentConfig, build_config, load_config
from .detector import (EffectiveChannel, UserCsi, build_effective_channel,
                       compute_ber, demap, ls_detect)
from .experiments import emit_results, run_experiment
from .metrics import compute_aer, compute_nmse
from .quantizer import QuantizerCodebook, passthrough, quantize, train_lloyd_max
from .receiver import (EstimationResult, ReceiverConfig, build_dictionary, cg_ad,
                       estimate_doppler, extract_non_isi, ls_fit_gains,
                       run_gf_receiver)
from .somp import SompResult, StopRule, somp_recover
from .waveform import (OtfsNumerology, TrainingSequence, TsOtfsFrame,
                       assemble_frame, isfft, otfs_demodulate, otfs_modulate,
                       parse_frame, sfft)

__version__ = "0.1.0"
