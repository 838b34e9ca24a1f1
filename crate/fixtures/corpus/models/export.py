import tensorflow as tf


def restore(sess, export_dir):
    tags = ["serve"]
    meta_graph_def = tf.saved_model.load(export_dir)
    return meta_graph_def, tags
