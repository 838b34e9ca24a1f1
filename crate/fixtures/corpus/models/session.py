import tensorflow.compat.v1 as tf1


def init_session():
    sess = tf1.Session()
    init_op = tf1.initialize_all_variables()
    sess.run(init_op)
    return sess
