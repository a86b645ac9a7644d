"""Progressive heterogeneous GOP networks."""
