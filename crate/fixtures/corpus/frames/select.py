import pandas as pd


def pick(df, rows):
    return pd.DataFrame.loc(df, list(rows))
