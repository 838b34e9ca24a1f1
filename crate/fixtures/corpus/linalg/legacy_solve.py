import torch as t


def legacy_solve(A, B):
    A = t.as_tensor(A)
    X, _ = t.lstsq(B, A)
    return X
