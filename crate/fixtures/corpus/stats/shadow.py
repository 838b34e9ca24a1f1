from scipy.misc import comb
from scipy.special import comb


def pairs(n):
    n = int(n)
    return comb(n, 2)
