"""Innovation-based data-driven output prediction and predictive control."""

from .errors import (CertificateError, ConfigError, DataLengthError, InnoDeePCError, InputError,
                     NumericalError, RankError)
from .hankel import HankelBlocks, build_hankel, partition
from .innovation import fit_varx
from .predictor import (InnoPredictor, OnlineState, build_inno_predictor, build_spc_predictor,
                        predict, predict_spc)
from .system import StateSpaceModel, benchmark_plant, simulate

__version__ = "0.1.0"

__all__ = [
    "CertificateError", "ConfigError", "DataLengthError", "InnoDeePCError", "InputError",
    "NumericalError", "RankError", "HankelBlocks", "build_hankel", "partition", "fit_varx",
    "InnoPredictor", "OnlineState", "build_inno_predictor", "build_spc_predictor", "predict",
    "predict_spc", "StateSpaceModel", "benchmark_plant", "simulate",
]
