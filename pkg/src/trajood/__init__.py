"""Cross-dataset OoD evaluation toolkit for trajectory prediction."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1

STEP_DT = 0.1
SAMPLING_RATE = 10.0
HOMOGENIZED_STEPS = 91
HISTORY_STEPS = 50
FUTURE_STEPS = 41
CURRENT_STEP = HISTORY_STEPS - 1
