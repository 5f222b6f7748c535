"""Linear mixed-effects models: formulas, sparse penalized least squares,
REML/ML estimation, and the downstream inference toolkit."""

from .bootstrap import BootResult, bootstrap, bootstrap_confint
from .data import DataTable, table_from_dict
from .errors import (CsvError, DataError, FormulaError, LmmError, ModelError,
                     NotPositiveDefiniteError, PlsError)
from .formula import FormulaAst, parse_formula, print_formula, rewrite
from .inference import (FitResult, anova_compare, anova_seq, confint,
                        cond_var_ranef, fit, fit_spec, finalize_fit, fitted,
                        hat_diag, hat_trace, predict, ranef, refit, refit_ml,
                        residuals, se_fixef, simulate, update_formula,
                        varcorr, vcov_fixef)
from .kernels import available_backends, backend_name, use_backend
from .modelbuild import (ModelSpec, assemble_spec, build_model_frame,
                         build_spec, homogeneous_variance, inject_Zt,
                         shared_template)
from .optimize import OptResult, check_convergence, optimize
from .pls import DevState, make_devfun, pls_gradient
from .profile import ProfileResult, profile, profile_confint
from .sparse import (CholFactor, SparseCsc, sp_crossprod, sp_multiply,
                     sp_transpose, symbolic_cholesky, write_matrix_market)

__version__ = "0.1.0"
