# Loss functions package
