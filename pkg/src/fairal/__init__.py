"""Fair active learning toolkit."""
