class NumericalFailure(ArithmeticError):
    """A solve produced or received NaN/Inf, or an SPD factorization broke down."""
