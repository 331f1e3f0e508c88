"""Exception types raised across the toolkit.

Every error condition documented by the public API maps to one of these
classes so callers can catch by failure mode rather than by message.
"""


class VoldxError(Exception):
    """Base class for all toolkit errors."""


# ---- volume I/O and preprocessing ----

class UnreadableFile(VoldxError):
    """File is missing, truncated, or not a supported volume format."""


class MissingSpacing(VoldxError):
    """Volume file carries no usable voxel spacing; never assumed to be 1 mm."""


class NonPositiveWidth(VoldxError):
    """Window width must be strictly positive."""


class EmptyVolume(VoldxError):
    """No voxel above the foreground threshold."""


class DegenerateAxis(VoldxError):
    """Resampling requires at least 2 samples along every axis."""


# ---- synthetic data ----

class LesionOutsideBrain(VoldxError):
    """Requested lesion sphere does not fit inside the brain region."""


class InvalidPrevalence(VoldxError):
    """Dataset prevalence must lie strictly between 0 and 1."""


# ---- models ----

class ShapeMismatch(VoldxError):
    """Array shape incompatible with the layer or model specification."""


class UnknownCategory(VoldxError):
    """Clinical record value absent from its codebook."""


class MissingTrace(VoldxError):
    """Forward trace was not retained but is required (e.g. for Grad-CAM)."""


# ---- training ----

class StepOutOfRange(VoldxError):
    """Scheduler step index outside [0, T]."""


class NonFiniteGradient(VoldxError):
    """A gradient contained NaN or infinity."""


class DivergedLoss(VoldxError):
    """Training loss became non-finite."""


# ---- evaluation ----

class EmptyInput(VoldxError):
    """Metric computation received no samples."""


class SingleClass(VoldxError):
    """ROC/AUC needs both classes present."""


class InsufficientClassMembers(VoldxError):
    """Each class must have at least k members for k-fold CV."""


class MismatchedFolds(VoldxError):
    """Paired comparison requires equal fold counts on identical folds."""


# ---- interpretation ----

class PatchLargerThanVolume(VoldxError):
    """Occlusion patch exceeds the volume extent on some axis."""


class IndexOutOfRange(VoldxError):
    """Requested slice index outside the volume."""


# ---- orchestration ----

class ConfigInvalid(VoldxError):
    """Run configuration failed schema validation."""


class MissingProvenance(VoldxError):
    """Report lacks the embedded config/seeds needed to reproduce it."""
