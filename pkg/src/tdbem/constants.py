import math

OUTER_ORDER = 4
INNER_ORDER = 8
TIME_ORDER = 4
CONE_SHRINK = 1e-12

# geometric grading of near-singular integrals
OUTER_GRADING_LEVELS = 5
MAX_GRADING_LEVELS = 40
# outer breakpoints closer than this (relative) are merged
MIN_BREAK_GAP = 1e-9
DATUM_TIME_ORDER = 16

H_MIN = 1e-6
DT_MIN = 1e-6

THETA = 0.4
SOBOLEV_S = 0.5
RCOND_THRESHOLD = 1e-14

# term integrals kept between blocks and levels
TERM_CACHE_SIZE = 200_000

CIRCLE_RADIUS = 0.5
CRACK_HALF_LENGTH = 0.5
ANGULAR_HALF_BASE = 0.1
APEX_HEIGHT = 0.1 * math.tan(math.pi / 3)

LEVELS_CSV_COLUMNS = (
    "level",
    "M_Gamma",
    "N_T",
    "dofs",
    "energy",
    "sq_energy_error",
    "indicator_total",
    "marked",
    "memory_S",
    "walltime_s",
)
FLOAT_FORMAT = "%.12e"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MESH_FLOOR = 4
