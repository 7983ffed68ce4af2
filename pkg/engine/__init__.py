# Training and adaptation engine package
