r"""
Bench settings file.

Every default used by `learning.config.ExperimentConfig` lives here. Put
site-specific changes in `server/conf/local_settings.py`; names defined there
override the ones below.
"""

######################################################################
# Experiment
######################################################################

# multilabel or segmentation
TASK = "multilabel"
# cel-baseline, focal-baseline or svae-reweight
METHOD = "svae-reweight"
NOISE_RATIOS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
SEEDS = (1, 2, 3)
# None picks the mode matching the task
NOISE_MODE = None
SPLIT_FRACTIONS = (0.52, 0.24, 0.24)
OUTPUT_DIR = "runs"
WORKERS = 1

######################################################################
# Synthetic datasets
######################################################################

MULTILABEL_SAMPLES = 2000
MULTILABEL_FEATURES = 20
MULTILABEL_CLASSES = 6

SEGMENTATION_SAMPLES = 500
SEGMENTATION_HEIGHT = 8
SEGMENTATION_WIDTH = 8
SEGMENTATION_CHANNELS = 8
SEGMENTATION_CLASSES = 5

######################################################################
# Model
######################################################################

HIDDEN_DIMS = (64,)
FEATURE_DIM = 64
LATENT_DIM = 16
# block L_SVAE gradients from reaching the encoder
ISOLATE_SVAE = True
ZERO_INIT_HEADS = False

######################################################################
# Losses and reweighting
######################################################################

FOCAL_GAMMA = 2.0
# standard (KL penalty) or literal (negated KL, rewards large sigma)
KL_SIGN = "standard"
# mse, task, kl
SVAE_LOSS_WEIGHTS = (1.0, 1.0, 1.0)
ALPHA_FLOOR = 0.01
# epoch or step
ALPHA_GRANULARITY = "epoch"
ALPHA_OVERRIDE = None

######################################################################
# Optimization
######################################################################

EPOCHS = 100
BATCH_SIZE = 64
LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

######################################################################
# Artifacts
######################################################################

AUDIT_WEIGHTS = True
AUDIT_LAST_K = 10
PROBE_ROUTING = False
SAVE_CHECKPOINTS = True

######################################################################
# Settings given in local_settings.py override those in this file.
######################################################################
try:
    from server.conf.local_settings import *  # noqa: F401,F403
except ImportError:
    pass
