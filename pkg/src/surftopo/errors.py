class SurfTopoError(Exception):
    """Base class for all errors raised on bad input or infeasible requests.

    The CLI maps these to exit code 2; anything else is treated as an
    internal error.
    """
