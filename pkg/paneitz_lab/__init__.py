import os

import yaml

import dask.config

from ._version import __git_commit__, __version__


def _register_config_defaults():
    fn = os.path.join(os.path.dirname(__file__), "paneitz-lab.yaml")
    with open(fn) as f:
        defaults = yaml.safe_load(f)
    dask.config.update_defaults(defaults)


_register_config_defaults()

from .geometry import Field, ManifoldModel, integrate, make_model, s3_moment  # noqa: E402
from .paneitz import (  # noqa: E402
    apply_paneitz,
    conformal_q,
    energy_pairing,
    paneitz_multiplier,
    q_field,
    solve_paneitz,
)
from .greenfn import expansion_fit, green_conformal_check, green_function  # noqa: E402
from .variational import (  # noqa: E402
    II_eps_gradient,
    II_eps_value,
    II_value,
    adams_check,
    blowup_diagnostics,
    minimize_II_eps,
)
from .blowup import (  # noqa: E402
    bubble_energy,
    bubble_mass,
    bubble_profile,
    capacity_oracle,
    capacity_solve,
    criterion_conformal,
    criterion_main2,
    lambda_const,
    lambda_map,
    test_function,
    testfn_mass_expansion,
)
