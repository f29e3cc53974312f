"""Bridge sampling for discretised multivariate diffusions.

Build a model with :func:`make_model`, describe what is known at the end
time with :class:`ObservationModel`, wrap both in a :class:`BridgeContext`
and either draw proposals with :func:`sample_bridge` or run the
independence sampler with :func:`run_chain`.
"""

from .bridges import (
    BridgeContext,
    BridgeKind,
    Construct,
    GPMode,
    bridge_step,
    em_step_proposal,
    gp_drift,
    gps_step,
    lb_step,
    mdb_step,
    proposal_logpdf,
    rb_step,
    rbminus_step,
    sample_bridge,
    sample_bridges,
    step_moments,
)
from .core import (
    DiffusionModel,
    GaussianStep,
    ObservationModel,
    Regime,
    SkeletonPath,
    TimeGrid,
    em_step,
    log_target_density,
    simulate_batch,
    simulate_forward,
)
from .errors import *  # noqa: F401,F403
from .linalg import gaussian_condition, gaussian_logpdf, matrix_sqrt
from .lna import LnaSolution, RhoHatTrack, lna_transition_terms, rho_hat, solve_lna, solve_ode
from .mcmc import ChainSummary, MhConfig, effective_sample_size, mh_acceptance_log_ratio, path_credible_band, run_chain
from .models import DEFAULT_THETA, MODEL_NAMES, jacobian_selfcheck, make_model

__version__ = "0.1.0"
