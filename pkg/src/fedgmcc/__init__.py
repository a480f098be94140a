"""Clustered federated learning by mode connectivity of client models.

Modules: ``nn`` (MLP engine), ``data`` (synthetic tasks and the binary
dataset format), ``emd`` (earth mover distance), ``normality`` (Shapiro-Wilk),
``partition`` (EMD-targeted client splits), ``curves`` (chain fitting),
``fed`` (federated strategies and the experiment loop), ``config`` and ``cli``.
"""

__version__ = "0.1.0"
