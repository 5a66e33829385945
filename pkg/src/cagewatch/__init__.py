"""cagewatch: corpora and classifiers for spotting animals-for-sale imagery.

The package covers the whole workflow: ingesting images from marketplace
listings, citizen-science observations, image search and captioned photo
corpora; assembling versioned dataset manifests with deterministic splits;
class-conditional augmentation; three training regimens over a small zoo of
architectures; within- and out-of-distribution evaluation with a
parameter-efficiency gain metric; and input-gradient saliency maps.
"""

from .augment import AugmentationPolicy, TransformStep, apply, compile_policy, eval_policy
from .datasets import (
    DatasetManifest,
    ManifestRow,
    SplitAssignment,
    assemble_corpus,
    build_ood_testsets,
    dedupe,
    split_train_test,
)
from .evaluate import (
    ConfusionMatrix,
    EvalReport,
    GainScore,
    aggregate,
    parameter_gain,
    predict_batch,
    score,
)
from .models import ModelSpec, build_model, count_parameters, set_trainable
from .records import ImageRecord, Label, ListingRecord, SourceKind, SpeciesInventory
from .saliency import ActivationRanking, SaliencyMap, render_overlay, saliency_map, top_k_by_activation
from .storage import ImageStore
from .synthetic import generate_records, generate_synthetic_corpus
from .training import TrainingRegimen, TrainingResult, early_stop_check, train

__version__ = "0.1.0"
