"""Learned feedback codes for the two-user Gaussian multiple-access channel.

Two transformer parity networks encode their users' messages block by
block while observing the channel output after every round; a transformer
decoder jointly classifies both users' blocks with successive refinement.
"""

from .channel import ChannelConfig, EpisodeTrace, residual_feedback, snr_to_sigma2, transmit
from .codec import (BeliefMatrix, MessageBlockSequence, RateSpec, belief_from_probs, f_b2d,
                    f_d2b, make_belief_matrix, partition_message, sum_rate)
from .config import ExperimentConfig, preset
from .decoder import DecodingResult, decode, harden, refine_step
from .encoder import (EncoderState, build_knowledge_vectors, encode_round, ingest_feedback,
                      run_episode)
from .evaluation import (BlerEstimate, UncodedSystem, emit_results, estimate_bler,
                         mac_sum_capacity, normal_approx_rate, q_function, q_inverse,
                         reference_curves, tdma_baseline, uncoded_bler_oracle)
from .model import MBAFSystem
from .training import Trainer, curriculum_snr, loss, sample_batch, train_step

__version__ = "0.1.0"
