# Analysis engines and shared helpers
