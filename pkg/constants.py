import os

PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))

TOOL_NAME = "condense-sim"
TOOL_VERSION = "0.4.0"
SCHEMA_VERSION = 1

# Logging
LOG_LEVEL = os.getenv("CONDENSE_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("CONDENSE_LOG_FILE")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Output
RESULTS_DIR = os.getenv("CONDENSE_RESULTS_DIR", os.path.join(PROJECT_ROOT, "results"))

# Finite field
DEFAULT_FIELD_DEGREE = 8
DEFAULT_REDUCTION_POLYNOMIAL = 0x11B
MAX_FIELD_DEGREE = 16
# log/antilog tables up to this degree, shift-reduce above
LOOKUP_TABLE_MAX_DEGREE = 8

# Learning
STALENESS_WINDOW = int(os.getenv("CONDENSE_STALENESS_WINDOW", "8"))
WEIGHT_INIT_RANGE = 0.5
LOSS_EPSILON = 1e-12
GRADIENT_CHECK_STEP = 1e-5
GRADIENT_CHECK_FLOOR = 1e-6

# Solvability
SEARCH_CAP = int(os.getenv("CONDENSE_SEARCH_CAP", str(10**7)))

# Header symbols charged per message, by application
HEADER_SYMBOLS = {
    "forwarding": 0,
    "function": 0,
    "average": 1,
    "consensus": 1,
    "neural": 1,
}

# CLI exit codes
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_RUNTIME = 4
EXIT_CAP = 5

# CSV columns
ARC_SYMBOLS_COLUMNS = ["generation", "tail", "head", "direction", "messages", "payload_symbols", "header_symbols", "total_symbols"]
TRAJECTORY_COLUMNS = ["generation", "value", "dropped_nodes", "lost_messages"]
OUTPUT_COLUMNS = ["generation", "node", "symbol", "value"]
SUCCESS_COLUMNS = ["field_order", "N", "N_prime", "trials", "successes", "probability", "seed"]
COST_COLUMNS = ["tail", "head", "forwarding_symbols", "nfc_symbols"]
