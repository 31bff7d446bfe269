"""recurlab: a desk-scale lab for recurrence, autoregression and CoT experiments."""

__version__ = "0.1.0"
