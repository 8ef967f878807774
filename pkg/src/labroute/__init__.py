"""Governed LLM assistance routing for instrumented labs.

Components: an OpenAI-compatible gateway with auditable prompt overlays,
a policy-aware routing service (budgets, approvals, stickiness), an
embedding-matched canonical question bank, a steerability metrics engine,
a trace-driven workload simulator, and a 100-query replay harness.
"""

__version__ = "0.1.0"
