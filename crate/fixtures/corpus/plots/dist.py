import seaborn as sns


def show(x):
    return sns.histplot(x.dropna())
