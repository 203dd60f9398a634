import numpy as np


def round_sig(values, digits: int):
    """Round to `digits` significant digits through the decimal text form.

    A value rounded this way prints back to the same text with ``%.{digits}g``
    and parses to the same float, which keeps the text artifacts exact.
    """
    fmt = f"{{:.{digits}g}}"
    if np.isscalar(values):
        return float(fmt.format(float(values)))
    arr = np.asarray(values, dtype=np.float64)
    flat = [float(fmt.format(v)) for v in arr.ravel()]
    return np.array(flat, dtype=np.float64).reshape(arr.shape)


def format_sig(value: float, digits: int) -> str:
    return f"{float(value):.{digits}g}"
