"""Compressive imaging with AMP and hidden Markov tree priors on Haar wavelets."""

from .amp import AmpDivergence, AmpState, amp_run, amp_step, lbp_oracle
from .denoiser import BgPrior, GmPrior, bg_denoise, denoise_batch, gm_denoise
from .hmt import HmtParams, StateMessages, hmt_decode, llr_to_pmf, pmf_to_llr
from .learning import HyperParams, extract_support
from .measurement import (MeasurementOperator, Observation, apply_A, apply_At, gen_operator,
                          measure, orthonormal_operator)
from .turbo import ReconstructionReport, TurboConfig, bg_amp, nmse_db, reconstruct
from .wavelet import QuadTreeIndex, build_tree_index, flat_tree, forward_dwt2, inverse_dwt2

__version__ = "0.1.0"
