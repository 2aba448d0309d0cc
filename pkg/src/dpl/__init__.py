"""Weak supervision as weighted logic over latent labels, trained by variational EM."""

from .data import Dataset, Instance, load_dataset, split_dataset
from .grounding import FactorGraph, graph_stats, ground
from .inference import BpOptions, MarginalTable, brute_force_marginals, loopy_bp
from .learning import EmOptions, e_step, fit, m_step_weights
from .logic import Program, Rule, Weight, parse_rule, render_rule, validate_program
from .metrics import evaluate, sample_precision
from .prediction import Classifier, TrainOptions, decide, predict, train_distill

__version__ = "0.1.0"
