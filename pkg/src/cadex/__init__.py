"""Constrained adversarial examples as counterfactual explanations for tabular classifiers."""

__version__ = "0.1.0"
