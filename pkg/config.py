ARTIFACT_VERSION = "0.3.0"

LOGGER_NAME = "xpi_logger"
LOG_FILE = "xpi.log"

# numeric tolerances
SOLVER_TOL = 1e-10
IMPROVEMENT_TOL = 1e-9
STOCHASTIC_ROW_TOL = 1e-12
MEASURE_SUM_TOL = 1e-10
VALUE_ITERATION_MAX_SWEEPS = 200_000

# online kappa-PI
DEFAULT_FAST_EXPONENT = 0.6
DEFAULT_SLOW_EXPONENT = 1.0
DEFAULT_SNAPSHOT_STRIDE = 10_000
RNG_CHUNK_SIZE = 65_536

# concentrability
DEFAULT_SERIES_LENGTH = 400
DEFAULT_SERIES_TOL = 1e-10

# approximate kappa-PI bounds; g(kappa) is not computable, 1.0 is a heuristic stand-in
DEFAULT_G_KAPPA = 1.0

# Garnet generator
DEFAULT_GARNET_BRANCHING = 3
DEFAULT_GARNET_REWARD_DENSITY = 0.5
DEFAULT_GAMMA = 0.9

THREADS_ENV_VAR = "XPI_THREADS"

CSV_FLOAT_FORMAT = "%.12g"
