"""
Adversarial Position-Debiasing Toolkit
Click models that stay invariant to position CTR, plus the feedback-loop
simulator and sweep harness used to evaluate them.
"""

__version__ = "1.0.0"
__author__ = "Adversarial Debiasing Toolkit"
