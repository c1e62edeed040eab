import numpy as np

# Field file header: magic, version, nx_plus1, ny_plus1 (little-endian uint32).
FIELD_MAGIC = b"WRMF"
FIELD_VERSION = 1
FIELD_HEADER_FORMAT = "<4sIII"
FIELD_DTYPE = np.dtype("<f8")

# Circulant embedding.
EMBEDDING_CLIP_TOLERANCE = 1e-8
EMBEDDING_MAX_DOUBLINGS = 2
DENSE_THRESHOLD = 4096

# Pseudo-inverse cutoffs relative to the largest singular value.
PRIOR_PINV_RCOND = 1e-8
ENSEMBLE_PINV_RCOND = 1e-8
DM_PINV_RCOND = 1e-6

# LM schedule and stopping rule.
LM_GAMMA = 5.0
LM_REL_TOL = 0.01
LM_PATIENCE = 2
LM_MAX_ITERATIONS = 50
LM_MAX_REJECTIONS = 5

# Symmetric solves.
JITTER_SCALE = 1e-10

# Total injection rate of the corner injectors; places median breakthrough near t = 20.
DEFAULT_TOTAL_RATE = 0.015
SATURATION_CLIP_TOLERANCE = 1e-10

WELL_NAMES = ["P{}".format(i + 1) for i in range(9)]
PRODUCER_COORDINATES = (0.1, 1.0, 1.9)

CSV_FLOAT_FORMAT = "%.17g"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# (sigma_o, sigma_pr, nu) of the log-weight noise model per transform.
NOISE_MODEL_DEFAULTS = {
    "identity": (16.9, 6.0, 4.0),
    "monotonic": (16.9, 6.0, 4.0),
    "non-monotonic": (95.3, 13.0, 3.0),
}
