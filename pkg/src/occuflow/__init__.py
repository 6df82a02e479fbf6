"""BEV occupancy-and-flow prediction toolkit: rasterization, waypoint
ground truth with backward flow, multi-task losses with analytic
gradients, the full metric suite, baselines and a desk-scale trainer."""

from .errors import (ConfigError, DivergenceError, FreqError, InvalidSchedule,
                     MalformedScenario, MissingPrediction, OccuflowError,
                     ParseError, ShapeMismatch, SpecMismatch)
from .grids import (FlowField, Grid, GridSpec, OccupancyGrid, bilinear_sample,
                    combine_occupancy, grid_to_world, warp, world_to_grid)
from .losses import (LossValue, LossWeights, PredictionSet, WeightSchedule,
                     combined_loss, flow_loss, make_schedule, occupancy_loss,
                     trace_loss)
from .metrics import (MetricsConfig, MetricsReport, ThresholdGrid, epe,
                      evaluate, flow_grounded, lookup_reference, pr_auc,
                      reference_table, soft_iou)
from .ofgr import read_grids, read_ofgr, write_ofgr
from .raster import (InputFeatures, WaypointTargets, assemble_input,
                     build_history_flow, build_waypoint_targets,
                     rasterize_map, rasterize_occupancy)
from .scenario import (AgentState, AgentTrack, Scenario, make_synthetic_scenario,
                       parse_scenario, scenario_to_json)

__version__ = "0.1.0"
