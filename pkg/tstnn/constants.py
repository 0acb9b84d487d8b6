PCM_SCALE = 32768.0
PCM_MAX = 32767

SSNR_MIN_DB = -10.0
SSNR_MAX_DB = 35.0
SNR_CAP_DB = 60.0
SILENCE_ENERGY = 1e-10

CHECKPOINT_MAGIC = b'TSTN'
CHECKPOINT_VERSION = 1

REFERENCE_PARAM_COUNT = 0.92e6
PARAM_COUNT_RANGE = (0.83e6, 1.01e6)

NORM_EPS = 1e-5
