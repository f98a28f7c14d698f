"""Explainable nonlinear MPC: SQP solver, constraint forensics and hypothesis ranking.

The usual entry points are :func:`xmpc.solver.solve` for a decision,
:func:`xmpc.hypotheses.generate_explanation` for its explanation, and
:func:`xmpc.evaluation.run_suite` for scoring explanations against
constructed ground truth.
"""

__version__ = "0.1.0"
