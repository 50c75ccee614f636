# MixSup segmentation - Source Package
