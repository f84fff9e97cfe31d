from .judge import JudgeScores, MockJudge, judge_reviews, parse_judge_response, render_judge_prompt
from .scorer import EdgeScorer, MetricsReport, rank_metrics, train_edge_scorer
from .text_metrics import rouge_l, semantic_fidelity

__all__ = [
    "EdgeScorer",
    "JudgeScores",
    "MetricsReport",
    "MockJudge",
    "judge_reviews",
    "parse_judge_response",
    "rank_metrics",
    "render_judge_prompt",
    "rouge_l",
    "semantic_fidelity",
    "train_edge_scorer",
]
