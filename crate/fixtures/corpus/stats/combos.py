from scipy import special as sp


def count(n, k):
    n = int(n)
    return sp.comb(n, k)
