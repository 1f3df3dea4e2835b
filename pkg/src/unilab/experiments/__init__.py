"""Config-driven experiment suites and the ``unilab`` command line."""

from .config import ExperimentConfig, from_dict, load, loads
from .results import ResultTable, read_csv
from .runners import (histogram, run, run_class_report, run_fig1, run_fig2, run_vamp_se,
                      total_variation)

__all__ = ["ExperimentConfig", "ResultTable", "from_dict", "histogram", "load", "loads",
           "read_csv", "run", "run_class_report", "run_fig1", "run_fig2", "run_vamp_se",
           "total_variation"]
