# State schema for the training-iteration graph
