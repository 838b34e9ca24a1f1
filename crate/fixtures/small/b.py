import torch


def solve_old(A, B):
    B = torch.tensor(B)
    return torch.lstsq(B, A)[0]
