import sklearn.model_selection


class Splitter:
    def __init__(self, seed):
        self.seed = seed

    def split(self, X, y):
        X = list(X)
        X_train, X_test, y_train, y_test = sklearn.model_selection.train_test_split(X, y, random_state=self.seed)
        return X_train, X_test, y_train, y_test
