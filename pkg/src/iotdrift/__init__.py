"""Flow-based IoT device classification with drift-aware model selection."""
from .distances import es_distance, js_distance, kr_distance, ks_distance
from .flows import DirectionStats, FlowRecord, FlowTable, extract_features, load_flow_table
from .forest import ForestParams, predict, train_forest
from .registry import GLOBAL_ID, ModelRegistry, ScoreDistribution
from .selection import SelectionPolicy, run_dynamic, run_static
from .synthgen import DriftSpec, generate

__version__ = "0.1.0"
