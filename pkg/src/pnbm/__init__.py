"""Neighborhood-based rating prediction with similarities learned by SGD."""

from .data import (CenteredView, RatingDataset, SplitSpec, center, filter_min_counts,
                   load_ratings, read_split, split, write_split)
from .errors import (ConfigError, DegenerateRangeError, DivergenceError, DuplicateRatingError,
                     EmptyDatasetError, EmptyResultError, InputError, MismatchError, ParseError,
                     PNBMError)
from .evaluation import density_sweep, repeat_protocol, rmse, run_once, stability
from .mlsd import SimilarityLayers, load_checkpoint, prediction_gradient, save_checkpoint
from .nbm import predict_centered, predict_many, predict_rating
from .training import PROFILES, TrainConfig, get_profile, make_baseline, objective, train

__version__ = "0.1.0"
