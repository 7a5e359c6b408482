"""flowplan: object-part scene flow to end-effector trajectories, with a
toy RGBD video diffusion model and a synthetic verification simulator."""

from . import benchmark, diffusion, geometry, grasp, io, planner, sceneflow, simulator, solver
from .errors import FlowPlanError

__version__ = "0.1.0"

__all__ = [
    "benchmark", "diffusion", "geometry", "grasp", "io", "planner",
    "sceneflow", "simulator", "solver", "FlowPlanError", "__version__",
]
