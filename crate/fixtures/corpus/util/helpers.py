import numpy as np
import os.path


def zeros_like_shape(shape):
    path = os.path.join("a", "b")
    return np.zeros(shape), path


def local_import(values):
    import numpy
    return numpy.asarray(values)


def average(values):
    from numpy import mean as avg
    return avg(values)
