"""Two-stage geostationary precipitation retrieval, desk-scale verifiable."""

from .grid import (
    ChannelDescriptor,
    GeoScene,
    GriddedPair,
    GridSpec,
    PatchRecord,
    PrecipSwath,
    collocate,
    latlon_to_index,
    rasterize_swath,
    tile_patches,
)
from .data import (
    AugmentOp,
    IntensityClass,
    IntensityThresholds,
    LDSConfig,
    RAIN_THRESHOLD,
    augment,
    class_histogram,
    classify_intensity,
    inv_log_transform,
    lds_weights,
    log_transform,
    split_by_period,
)
from .model import TwoStageOutput, UNet, UNetConfig, classifier_prob, combine, unet_forward
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .training import (
    LossReport,
    TrainConfig,
    lds_weighted_regression_loss,
    masked_l2_loss,
    optimizer_step,
    train,
    weighted_ce_loss,
)
from .verification import (
    ContingencyTable,
    MetricReport,
    accumulate,
    case_report,
    csi_map,
    merge,
    metrics,
)
from .mosaic import GlobalEstimate, SatelliteCoverage, coverage_mask, merge_global
from .synthetic import RainLaw, SynthConfig, generate_dense_noisy, generate_pair

__version__ = "0.1.0"
