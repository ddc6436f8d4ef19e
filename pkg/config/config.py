import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Logging
LOG_LEVEL = os.getenv("MADM_LOG_LEVEL", "INFO").upper()

# Parallelism: 0 means "use every core"
WORKERS = int(os.getenv("MADM_WORKERS", "0"))
if WORKERS <= 0:
    WORKERS = os.cpu_count() or 1

# Output
OUTPUT_DIR = os.getenv("MADM_OUTPUT_DIR", "results")

# Parameter constraint tolerance (u+v=1, p+q=1)
CONSTRAINT_TOLERANCE = 1e-14

# Truncation and quadrature targets
TAIL_TOLERANCE = float(os.getenv("MADM_TAIL_TOLERANCE", "1e-12"))  # infinite sums / products
QUAD_TOLERANCE = float(os.getenv("MADM_QUAD_TOLERANCE", "1e-12"))  # trapezoid aliasing target
MAX_NODES = int(os.getenv("MADM_MAX_NODES", "512"))  # cap on nodes per contour
MIN_NODES = int(os.getenv("MADM_MIN_NODES", "32"))

# Diagnostics thresholds
IMAG_RESIDUAL_FINITE = 1e-8   # multi-contour finite-system formula
IMAG_RESIDUAL_FREDHOLM = 1e-7  # lambda / mu contour probabilities
DENOMINATOR_FLOOR = 1e-12
POLE_PROXIMITY = 1e-8

# q-combinatorics
BRACKET_BINOMIAL_CAP = 64

# Master equation
MASTER_WINDOW_HALF_WIDTH = int(os.getenv("MADM_MASTER_WINDOW", "30"))
MASTER_LEAK_THRESHOLD = 1e-9
MASTER_RTOL = 1e-10
MASTER_ATOL = 1e-13

# Simulation
DEFAULT_SEED = int(os.getenv("MADM_SEED", "20140101"))
EVENT_GUARD = int(float(os.getenv("MADM_EVENT_GUARD", "1e9")))  # events per replica
PEEL_TAIL_TOLERANCE = 1e-10
REPLICA_CHUNK = int(os.getenv("MADM_REPLICA_CHUNK", "2000"))

# Airy / F2
AIRY_SERIES_RADIUS = 8.0
AIRY_DOMAIN = 40.0
AIRY_SERIES_DPS = 40  # decimal digits carried through the Maclaurin sums
F2_DEFAULT_ORDER = 60

# Fredholm contours
LAMBDA_RADIUS_CAP = 100.0  # largest lambda-circle radius 1.5 tau^-m accepted
LAMBDA_RADIUS_FACTOR = 1.5
PREFACTOR_PRODUCT_TOLERANCE = 1e-14
