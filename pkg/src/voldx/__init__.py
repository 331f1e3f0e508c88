"""voldx: interpretable volumetric CT diagnosis toolkit.

Modules:
  volume      - Volume container, VOLR and NIfTI-1 I/O
  preprocess  - windowing, background removal, spline zoom, normalization
  phantom     - synthetic head phantoms with known lesion masks
  clinical    - clinical codebooks, synthetic records, feature encoding
  dataset     - labeled dataset generation and manifests
  layers      - conv3d / instance norm / PReLU / dense with backprop
  models      - clinical baseline, imaging CNN, and multi-modal fusion model
  optim       - rectified Adam and cosine annealing
  augment     - online rotation / zoom / flip augmentation
  train       - seeded training loop
  metrics     - confusion metrics, ROC/AUC, Student-t tools
  crossval    - stratified k-fold cross-validation
  saliency    - occlusion sensitivity maps and Grad-CAM
  render      - slice-montage overlays
  cli         - the `voldx` command
"""

__version__ = "0.1.0"

from .augment import AugmentSpec, augment
from .checkpoint import load_checkpoint, save_checkpoint
from .clinical import (
    ClinicalRecord,
    EncodingSchema,
    bayes_optimal_accuracy,
    encode_clinical,
    generate_clinical,
)
from .crossval import cross_validate, cross_validate_arrays, make_folds
from .dataset import (
    DatasetManifest,
    canonical_lesion_mask,
    generate_dataset,
    load_dataset_arrays,
    load_manifest,
)
from .metrics import compare_models, confusion_metrics, mean_std_ci, roc_auc
from .models import Model, ModelSpec, bce_loss, compute_gradients
from .optim import RAdamState, ScheduleSpec, cosine_lr, radam_rho, radam_step
from .phantom import LesionSpec, PhantomSpec, add_scanner_bed, generate_phantom
from .preprocess import (
    PreprocessConfig,
    WindowSpec,
    normalize_intensity,
    preprocess,
    remove_background,
    siz_resample,
    window_volume,
)
from .saliency import OcclusionSpec, SaliencyMap, grad_cam, normalize_map, occlusion_map
from .train import TrainConfig, train, train_arrays
from .volume import Volume, load_volume, save_nifti, save_volume
