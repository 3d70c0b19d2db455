"""Random-walk reasoning experiments on knowledge graphs."""

from ._pathagg import (
    ConfigError,
    DataError,
    DatasetSplit,
    KnowledgeGraph,
    NumericError,
    ParseError,
    Run,
    RuleSet,
    RuleWeights,
    config_hash,
    kl,
    learn_weights,
    load_split,
    make_graph,
    mine_rules,
    open_run,
    preset_config,
    prop1_check,
    rule_accuracies,
    rule_prob,
    sample_walks,
    stages,
    synthetic_cot,
    uniform_dist,
    unweighted_dist,
    weighted_dist,
)

__all__ = [name for name in dir() if not name.startswith("_")]
