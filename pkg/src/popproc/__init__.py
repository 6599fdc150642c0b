"""Population processes evaluated at random times.

Exact distributions, passage times, simulation, and consistency checks
for four integer-valued processes built by composing a linear birth
(Yule) chain, a linear death chain, and a sublinear death chain with a
random clock (a homogeneous Poisson process or an independent linear
birth process).
"""

__version__ = "0.1.0"

from .composed import (
    birth_at_poisson_factorial_moment,
    birth_at_poisson_mean,
    birth_at_poisson_pmf,
    birth_at_poisson_variance,
    death_at_poisson_mean,
    death_at_poisson_pgf,
    death_at_poisson_pmf,
    death_at_poisson_variance,
    iterated_birth_pmf,
    pmf_table,
    sublinear_death_at_poisson_mean,
    sublinear_death_at_poisson_pmf,
    sublinear_death_mean_upper_bound,
)
from .errors import (
    CancellationWarning,
    ExponentOverflowError,
    PathExplosionError,
    SeriesConvergenceError,
)
from .laws import (
    bell_polynomial,
    death_pgf,
    linear_death_pmf,
    poisson_pmf,
    stirling2,
    sublinear_death_mean,
    sublinear_death_pmf,
    yule_pmf,
)
from .models import (
    BirthAtPoisson,
    ComposedModel,
    DeathAtPoisson,
    IteratedBirth,
    PmfTable,
    SublinearDeathAtPoisson,
)
from .params import (
    DEFAULT_CONTROL,
    BirthParams,
    DeathParams,
    PoissonParams,
    SeriesControl,
)
from .passage import (
    FptQuery,
    HitProbResult,
    birth_at_poisson_fpt_cdf,
    birth_at_poisson_fpt_density,
    birth_at_poisson_hitprob,
    death_at_poisson_fpt_density,
    death_at_poisson_hitprob,
    fpt_cdf,
    fpt_density,
    hitprob_partial_sum,
    hitprob_via_quadrature,
    iterated_birth_fpt_density,
    iterated_birth_hitprob,
    linear_death_fpt_density,
    sublinear_death_fpt_density,
    sublinear_downcrossing_survival,
    sublinear_tail_probability,
    yule_level_occupation,
)
from .simulate import (
    EmpiricalEstimate,
    FptEstimate,
    PathRecord,
    PmfEstimate,
    SimConfig,
    dump_paths,
    estimate_downcrossing,
    estimate_fpt,
    estimate_pmf,
    path_stream,
    sample_composed,
    sample_linear_death,
    sample_sublinear_death,
    sample_yule,
)
from .verify import (
    IdentityCheck,
    KernelCheck,
    OdeCheckReport,
    check_death_at_poisson_ode,
    check_jump_kernel,
    check_linear_death_ode,
    check_q1Z_identity,
    death_at_poisson_generator,
    integrate_forward_system,
    run_suite,
)

__all__ = [name for name in dir() if not name.startswith("_")]
