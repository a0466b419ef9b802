"""Simulation and verification of random overlap structures.

Reference random measures (hierarchical cascades, single atoms, exactly
enumerated spin models) and Monte Carlo spin chains feed a family of
statistical identity tests: replica-coupling identities, tilt-invariance
profiles, partition-weight invariance, triangle censuses with tree
reconstruction, support and extension probes, and barycenter bounds.
"""
# Numeric determinism across worker counts requires single-threaded BLAS
# reductions; set before numpy first loads, respecting explicit user choices.
import os as _os

for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")
del _os, _var

from .core import (ConstraintMatrix, Estimate, OverlapMatrix, ReplicaVector,
                   a_star, matrix_approx, mean_estimate, overlap_matrix,
                   ultrametric_indicator)
from .functions import (Constant, PairProduct, Polynomial, Threshold, Window,
                        matrix_from_dict, scalar_from_dict)
from .measures import (CascadeSource, DiracSource, FiniteAtomicRealization,
                       GroupSample, MeasureSource, OverlapLaw,
                       exact_overlap_law, sample_pd_weights, sample_replicas)
from .spin import (ChainSpinSource, DisorderRealization, EnumeratedSpinSource,
                   MCParams, MixedPSpinModel, PerturbationSpec,
                   add_perturbation, draw_disorder, energy,
                   enumerate_gibbs_exact, geometric_ladder,
                   gibbs_sample_replicas, sk_model, write_overlap_csv)
from .identities import (Budget, TestReport, bootstrap_se, gg_identity_test,
                         mixture_law_check, pair_mean_estimate)
from .invariance import (MatrixWeightFunction, ThresholdPartition,
                         WeightVector, invariance_test, partition_weights,
                         phi_estimate, t_map, theorem2_test,
                         tilted_partition_map, tilted_partition_weights)
from .ultrametric import (BarycenterReport, TriangleCensus, UltrametricTree,
                          barycenter_diagnostic, barycenter_report,
                          build_ultrametric_tree, census_report,
                          extension_probe, min_psd_failure_m, pattern_gram,
                          pattern_is_psd, realize_pattern_replicas,
                          sample_triangles, support_probe, triangle_census,
                          ultrametricity_stat)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runner import RunResult, run_experiment, summarize
from .rng import child_rng, generator, seed_root, subseq

__version__ = "0.1.0"
