"""Benchmark prompting, endpoint querying and grading."""
from .client import BENCHMARK, CONVERSATION, GenerationConfig, collect_transcript, query_endpoint
from .grading import INVALID, ScoreReport, Tally, Transcript, average_scores, grade, normalize_answer, relative_improvement
from .prompts import ChatFamily, build_prompt, render_chat, render_messages
from .questions import QType, Question, load_questions, write_questions

__all__ = [
    "BENCHMARK",
    "CONVERSATION",
    "INVALID",
    "ChatFamily",
    "GenerationConfig",
    "QType",
    "Question",
    "ScoreReport",
    "Tally",
    "Transcript",
    "average_scores",
    "build_prompt",
    "collect_transcript",
    "grade",
    "load_questions",
    "normalize_answer",
    "query_endpoint",
    "relative_improvement",
    "render_chat",
    "render_messages",
    "write_questions",
]
