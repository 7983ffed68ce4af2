# Segmentation network package
