from rankcot.evaluation.consistency import consistency
from rankcot.evaluation.metrics import (
    RougeScore,
    accuracy,
    hit_rate,
    lcs_length,
    length_stats,
    rouge_l,
    string_em,
)
from rankcot.evaluation.report import EvalReport, build_report, score_records
from rankcot.evaluation.scenarios import ScenarioAssignment, assign_scenarios
from rankcot.evaluation.similarity import FixedEmbedder, HashingEmbedder, HttpEmbedder, similarity

__all__ = [
    "EvalReport",
    "FixedEmbedder",
    "HashingEmbedder",
    "HttpEmbedder",
    "RougeScore",
    "ScenarioAssignment",
    "accuracy",
    "assign_scenarios",
    "build_report",
    "consistency",
    "hit_rate",
    "lcs_length",
    "length_stats",
    "rouge_l",
    "score_records",
    "similarity",
    "string_em",
]
