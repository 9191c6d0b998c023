import os

from dotenv import load_dotenv

load_dotenv()

# Logging
LOG_LEVEL = os.getenv("GRF_STEER_LOG_LEVEL", "INFO").upper()

# Conic solver used by the cvxpy adapter
SOLVER_NAME = os.getenv("GRF_STEER_SOLVER", "CLARABEL").upper()
SOLVER_VERBOSE = os.getenv("GRF_STEER_SOLVER_VERBOSE", "false").lower() in ("1", "true", "yes")

# Monte Carlo worker processes (1 runs trials in-process)
MC_WORKERS = int(os.getenv("GRF_STEER_MC_WORKERS", "1"))

# Default directory for solve/simulate/report artifacts
OUTPUT_DIR = os.getenv("GRF_STEER_OUTPUT_DIR", "out")
