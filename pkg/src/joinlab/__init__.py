"""joinlab: a desk-scale query-optimizer laboratory.

Three optimization regimes over one in-memory engine: exhaustive dynamic
programming driven by exact cardinalities, the same search driven by
synopsis-based estimates, and an estimate-free heuristic that reads only
the join graph and base-table sizes.
"""

from .catalog import (Catalog, ColumnDef, ForeignKey, Relation, TableDef,
                      build_indexes, load_schema, load_table_csv,
                      validate_constraints, INDEXED, NON_INDEXED)
from .cardinality import (BaseRowsProvider, ColumnStats, EstimateProvider,
                          StatsCatalog, TrueCardProvider, build_stats,
                          build_stats_catalog, estimate_cardinality,
                          q_error, selectivity_join, selectivity_selection)
from .costmodel import CostParams, cost_node, cost_plan
from .executor import (ExecConfig, ResultSummary, execute_plan,
                       execute_subset, result_digest)
from .frontend import (JoinGraph, QuerySpec, build_join_graph, connected,
                       parse_query, render_query)
from .generator import GeneratorConfig, build_catalog, generate_dataset, load_dataset
from .harness import (MetricsRow, WorkloadReport, distribution_experiment,
                      load_workload, operator_census, run_workload,
                      thread_sweep)
from .optimizers import (JoinOrderResult, OptimizerConfig, c_s2, dp_optimize,
                         quickpick_sample, simpli2_order, simpli2_plan)
from .planir import (AnnotatedPlan, Join, Leaf, annotate, plan_digest,
                     render_sql, validate_plan)

__version__ = "0.1.0"
