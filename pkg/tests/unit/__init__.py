# Unit tests for the tensor engine, network, training and data modules
