"""Probabilistic movement primitives: training, adaptation and simulation."""
from .adaptation import (JointTarget, LaplaceOptions, LaplaceReport, TaskTarget, condition_gaussian,
                         condition_point, condition_task, task_distribution)
from .basis import BasisConfig, block_feature_matrix, features, features_deriv
from .errors import (AdaptationError, DimensionError, InputError, NoMoveError, NumericalError,
                     ParseError, ProMPError, SegmentationError, TimeOrderError)
from .kinematics import ForwardKinematics, LinearKinematics, PlanarArm, PlaneEmbedding
from .model import (Demonstration, GaussianState, ProMP, log_marginal_likelihood, marginal_at,
                    sample_trajectory, sample_weights)
from .training import (MLE, MLE_BLOCKDIAG, NIWPrior, TrainOptions, TrainReport, e_step, em_train,
                       em_train_approx, least_squares_train)

__all__ = [n for n in dir() if not n.startswith("_")]
