from pandas import DataFrame


def old_first(data):
    frame = DataFrame(data)
    return frame.ix(0)
