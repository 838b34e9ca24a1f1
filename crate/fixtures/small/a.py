import torch


def solve(A, B):
    A = torch.tensor(A)
    return torch.linalg.lstsq(A, B).solution
