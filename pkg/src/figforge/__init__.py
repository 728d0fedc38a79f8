"""figforge: few-shot induction, classification and generation of
compositional lattice figures."""

__version__ = "0.1.0"
