"""Quality metrics, preference models, and ranking for 2D projections."""

from .data import (Dataset, DistanceRankModel, Embedding, NeighborhoodPair,
                   build_distance_rank_model, ingest_image_folder, neighborhoods)
from .errors import (DataError, DrJudgeError, GraphError, NumericalError,
                     ParameterError, UndefinedMetricError, ValidationError)
from .evaluation import (ALL_METRICS, CvReport, MetricVector, PreferenceCorpus,
                         build_corpus, correlation_matrix, cross_validate,
                         normalize, prune_correlated, roc_auc)
from .measure import MetricConfig, measure_dataset, measure_embedding

__version__ = "0.1.0"
