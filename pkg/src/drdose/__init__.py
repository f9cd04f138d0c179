"""Doubly robust estimation of dose-response curves for continuous treatments.

Strata mean average potential outcomes are estimated with an outcome
regression augmented by inverse probabilistic generalised propensity score
(PGPS) covariates; a polynomial through the strata estimates approximates the
dose-response curve, and a unit bootstrap supplies standard errors.
"""

__version__ = "0.1.0"

from .aor import AorFit, AorSpec, WaldResult, fit_aor, predict_aor, wald_joint_test
from .apo import (ApoRow, StrataApoTable, dr_strata_apo, or_strata_apo, sliding_apo,
                  support_check)
from .boot import (BootstrapResult, PipelineConfig, bootstrap_many, bootstrap_pipeline,
                   run_pipeline)
from .compare import wr1_strata_apo, wr2_strata_apo
from .curve import DoseResponseCurve, eval_curve, evaluate_grid, fit_curve
from .data import (Dataset, StrataSpec, Term, assign_strata, load_csv, parse_terms,
                   slide_partition, stratum_levels, write_csv)
from .errors import (DataError, DrDoseError, EmptyStratumError, EstimationError,
                     MissingColumnError)
from .gps import PgpsFit, fit_treatment_model, mean_inverse_pgps, pgps_at
from .numkit import RngStream, ols

__all__ = [
    "AorFit", "AorSpec", "ApoRow", "BootstrapResult", "DataError", "Dataset",
    "DoseResponseCurve", "DrDoseError", "EmptyStratumError", "EstimationError",
    "MissingColumnError", "PgpsFit", "PipelineConfig", "RngStream", "StrataApoTable",
    "StrataSpec", "Term", "WaldResult", "assign_strata", "bootstrap_many",
    "bootstrap_pipeline", "dr_strata_apo", "eval_curve", "evaluate_grid", "fit_aor",
    "fit_curve", "fit_treatment_model", "load_csv", "mean_inverse_pgps", "ols",
    "or_strata_apo", "parse_terms", "pgps_at", "predict_aor", "run_pipeline",
    "slide_partition", "sliding_apo", "stratum_levels", "support_check",
    "wald_joint_test", "wr1_strata_apo", "wr2_strata_apo", "write_csv",
]
