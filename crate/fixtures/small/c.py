from scipy.special import comb


def pairs(n):
    return comb(n, 2)
