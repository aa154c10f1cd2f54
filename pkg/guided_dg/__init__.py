"""Top-level package for guided-dg."""

from .experiment import (
    Experiment,
    run
)
from .guidespace import (
    GuideSpace,
    solve_guide_space
)
from .synthdata import (
    GenSpec,
    generate
)
from .config import TrainConfig
