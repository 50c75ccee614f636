# End-to-end training and command-line tests
