"""gridforge: controller synthesis and time-domain simulation for
grid-forming inverters and droop-based microgrids."""

__version__ = "0.1.0"

from .droop import LinePhasor, PowerPair  # noqa: F401
from .lineloop import LineModel  # noqa: F401
from .numerics import RationalTF, StateSpace, TFMatrix2  # noqa: F401
from .plant import DQPair, InverterParams, InverterState  # noqa: F401
from .scenario import Scenario, build_scenario, load_scenario  # noqa: F401
from .synthesis import ControllerSet, DesignSpec, InverterDesign, synthesize  # noqa: F401
from .timeseries import TimeSeries  # noqa: F401
