import pandas


def build(data):
    dt = pandas.DataFrame(data)
    first = dt.loc(0)
    return first


def rebuilt(data):
    dt = pandas.DataFrame(data)
    dt = list(dt)
    return dt.loc(0)
