# Data ingestion, preprocessing and synthetic benchmark package
