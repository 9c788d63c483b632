"""Neural decoding of active constraints for network-flow and DC-OPF linear programs."""
from .errors import *  # noqa: F401,F403
from .network import (  # noqa: F401
    FlowStructure,
    Kind,
    Network,
    build_flow_structure,
    embedded_case,
    load_network,
    random_connected_network,
    save_network,
)

__version__ = "0.1.0"
from .oracle import solve  # noqa: F401,E402
from .surrogate import Mlp, TrainConfig, train  # noqa: F401,E402
from .decoder import DecodeConfig, decode  # noqa: F401,E402
from .dataset import SamplingConfig, generate  # noqa: F401,E402
