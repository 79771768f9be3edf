"""Motor-imagery EEG pipeline: harmonize heterogeneous recordings into one
template space, pretrain a masked-token transformer jointly with
classification, adapt to a new subject from a small calibration block.

The numeric core is numpy with a small reverse-mode autograd; scipy supplies
filter design and special functions.  Everything is seeded and deterministic.
"""

from .data import (DatasetManifest, Trial, UNIFIED_VOCAB, load_manifest,
                   read_trial_file, save_manifest, split_calibration,
                   write_trial_file)
from .dsp import FilterSpec, ResampleSpec, bandpass, resample
from .model import (EncoderConfig, ModelState, ce_loss, decode, encode,
                    head_logits, init_model, joint_loss, mask_apply,
                    pool_tokens, rec_loss, swap_head, tokenize_batch)
from .pipeline import (PreprocSpec, harmonize_subject, harmonize_trial,
                       prepare_downstream, prepare_pretraining)
from .spatial import (AlignReference, TemplateSpec, TemplateWeights,
                      apply_template, ea_reference, ea_whiten,
                      template_weights)
from .synth import SynthSpec, synth_dataset
from .tokenizer import TokenizerConfig, token_count, tokenize
from .train import (MASK_GRID, FinetuneReport, TrainConfig, ablation_suite,
                    evaluate_trials, finetune, mask_sweep, pretrain,
                    sample_mask_set, summarize)

__version__ = "0.1.0"
