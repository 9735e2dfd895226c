"""Joint bias correction of dispersion-model maps and low-cost sensor calibration."""

from .core import (DEFAULT_GUARD, BiasParameters, ConcentrationGrid, SpatialCovariates,
                   TemporalCovariates, bias, correct_grid, correct_values, eval_l0, eval_lc,
                   forward_model, invert_to_concentration)
from .errors import (AQFusionError, ConfigurationError, DataError, FormatError,
                     IdentifiabilityError, SamplerError, SingularCorrectionError)
from .measurement import (CHANNELS, Rows, SensorCalibration, build_rows, loglik_row, loglik_rows,
                          sensor_forward, sensor_invert)

__version__ = "0.1.0"
