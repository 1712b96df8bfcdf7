"""Frame-level emotion prediction post-processing toolkit.

Library layout:

* ``datamodel``        file schemas and core per-frame types
* ``mtl_head``         three-headed prediction network, loss, training
* ``temporal_filters`` box and Gaussian smoothing over frame indices
* ``ensemble``         two-model blending and blend-weight tuning
* ``au_threshold``     binary decision thresholds and their tuning
* ``metrics``          CCC, F1, KL divergence, Cohen's kappa, task score
* ``compound``         compound-expression aggregation and class balance
* ``cli``              command-line pipeline driver
"""

from .datamodel import (
    AU_IDS,
    EXPR_CLASSES,
    FrameRecord,
    MtlLabels,
    PredictionSet,
    TaskAlignment,
    VideoTrack,
    align,
    load_features,
    load_labels,
    load_predictions,
    save_features,
    save_labels,
    save_predictions,
)
from .errors import (
    ContractError,
    DivergenceError,
    EmopostError,
    MissingInputError,
    ParseError,
    SchemaError,
    ValidationError,
)

__version__ = "0.1.0"
