"""Continual-learning engine with per-parameter quadratic penalties.

Implements plain sequential training, the symmetric synaptic-intelligence
penalty (SI) and the asymmetric overestimating penalty (ALASSO) over a
minimal dense network with exact reverse-mode gradients, plus a benchmark
harness for permuted and class-split task streams.
"""

from .config import ExperimentConfig
from .consolidation import (ConsolidationState, Hyperparams, RegularizerKind,
                            accumulate_importance, alpha, consolidate,
                            load_state, save_state, surrogate_grad,
                            surrogate_loss, total_loss_and_grad)
from .harness import (AccuracyMatrix, MetricsReport, NumericalError,
                      RunResult, compute_metrics, evaluate,
                      probe_loss_asymmetry, run_continual,
                      run_multi_task_baseline, run_single_task_baseline)
from .nn import (AdamState, NetworkSpec, adam_step, forward, init_params,
                 task_loss, task_loss_and_grad)
from .tasks import (Dataset, IdxError, Task, TaskStream, batches, load_idx,
                    load_mnist_dir, make_permuted_tasks, make_split_tasks)

__version__ = "0.1.0"
