# Noisy quantization: deconvolution k-means and rate experiments
