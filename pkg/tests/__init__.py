# MixSup segmentation tests
