"""Monte Carlo toolkit for measure-preserving systems, towers and partition perturbations."""

from .errors import (CapacityExceeded, ConfigError, ErgolabError, InsufficientCodewords,
                     NotSeparated, ScanBudgetExceeded, UnresolvedError, WindowTooLarge)
from .partitions import (NameWindow, Partition, interval_partition, label_at, name_window,
                         partition_distance, rokhlin_metric, sturmian_partition, symbol_partition)
from .queries import Cylinder, Interval, IsolatedWord, Whole, Word, query_from_dict
from .rng import RngStream
from .sampling import SamplingPlan
from .stats import ProbEstimate
from .systems import (BernoulliShift, MarkovShift, Product, Rotation, first_entry_time,
                      orbit_window, sample_point, spec_from_dict, spec_from_json)
from .towers import (KRTower, LevelSet, TowerLevels, build_tower, default_base, locate,
                     verify_tower)

__version__ = "0.1.0"
