import numpy as np


def zeros(n):
    return np.zeros(n)
