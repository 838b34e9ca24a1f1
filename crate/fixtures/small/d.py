import pandas as pd


def head_row(rows):
    df = pd.DataFrame(rows)
    return df.ix(0)
