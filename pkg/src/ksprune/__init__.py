"""High-similarity pruning and knowledge-shortcut hallucination detection
for multi-source context-question-answer corpora."""

__version__ = "0.1.0"
