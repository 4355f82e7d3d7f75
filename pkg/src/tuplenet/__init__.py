"""tuplenet: feature learning for multi-channel time series.

Three pre-training schemes built on a minimal differentiable core:
tied-weight convolutional auto-encoding, cross-trial encoding with
per-subject hydra pathways, and similarity-constraint tuple encoding,
plus the cross-validation, aggregation, and significance-testing harness
around them.
"""

from .core import (Activation, ConvFilterBank, DenseOutput, Dropout, Flatten,
                   Model, Parameter, ShapeError, TiedDeconv, TimeConv,
                   conv_time_forward, deconv_time_tied_forward, dropout_apply,
                   hinge_output_forward, l2svm_loss, softmax_nll)
from .data import (SplitPlan, StoreError, Trial, TrialStore, crop_trials,
                   import_csv, load_store, make_split, normalize_store,
                   normalize_trial, pad_store_to_longest, save_store, zero_pad)
from .evalstat import (ConfusionMatrix, PcaBasis, binary_confusion,
                       binomial_central_band, binomial_p, confusion, mcc,
                       msre, pca_fit, pca_msre, pca_reconstruct,
                       two_proportion_z)
from .optim import OptimizerConfig, TrainingError, sgd_step
from .schemes import (CrossTrialHydra, CteLoss, HydraTiedDeconv,
                      HydraTimeConv, SceLoss, Strategy, cae_adapt_individual,
                      cae_store_mcc, cae_store_msre, cae_train,
                      cte_subject_banks, cte_train_stage1, cte_train_stage2,
                      export_filters_csv, hydra_forward,
                      sce_constraint_accuracy, sce_forward, sce_train)
from .synth import synth_class_waveforms, synth_generate, synth_planted_channels
from .train import (AggregatedModel, ClassifierSpec, ConvSpec, FoldData,
                    FoldReport, aggregate, build_classifier, crossval_run,
                    load_model, load_pretrained, save_bank, save_model, sweep,
                    train_supervised)
from .tuples import Scope, TupleIndex, make_pairs, make_tuples

__version__ = "0.1.0"
