"""Self-hosted issue-report management assistant.

Indexes a forge repository's issue history and reacts to each newly
opened issue with three kinds of feedback: links to similar existing
issues, a predicted severity label, and a ranked list of likely buggy
files. Ships with an offline evaluation CLI and a forge simulator for
end-to-end testing.
"""

from issuetriage.analyzers import (
    DuplicateConfig,
    SeverityExample,
    SeverityModel,
    detect_duplicates,
    localize_bugs,
    predict_severity,
    TrainingError,
    train_severity,
)
from issuetriage.model import (
    CodeFileRef,
    FeedbackBundle,
    IssueRecord,
    RepoRef,
    SeverityClass,
)
from issuetriage.plugins import AnalyzerHost, AnalyzerKind, consensus_wrap
from issuetriage.text import build_corpus, cosine, tfidf_vector, tokenize

__version__ = "0.1.0"

__all__ = [
    "AnalyzerHost",
    "AnalyzerKind",
    "CodeFileRef",
    "DuplicateConfig",
    "FeedbackBundle",
    "IssueRecord",
    "RepoRef",
    "SeverityClass",
    "SeverityExample",
    "SeverityModel",
    "__version__",
    "build_corpus",
    "consensus_wrap",
    "cosine",
    "detect_duplicates",
    "localize_bugs",
    "predict_severity",
    "tfidf_vector",
    "tokenize",
    "TrainingError",
    "train_severity",
]
