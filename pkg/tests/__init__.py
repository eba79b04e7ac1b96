import os

# Set the log level for the entire test run
os.environ['LYAPGUARD_LOG_LEVEL'] = 'DEBUG'
