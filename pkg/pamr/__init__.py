# Pixel-adaptive mask refinement package
