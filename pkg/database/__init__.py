# Run registry package
