TEST_OUTFILE = None  # e.g. 'run-{pid}.log', relative to src/
RAISE_CLI = False  # re-raise instead of mapping errors to exit codes
LOG_LEVEL = 'INFO'
