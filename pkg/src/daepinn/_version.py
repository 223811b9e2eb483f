from importlib.metadata import PackageNotFoundError, distribution

try:
    version = distribution("daepinn").version
    """`version` defines the daepinn version that is currently installed in the calling environment"""
except PackageNotFoundError:  # pragma: no cover
    # running from a source checkout that was never installed
    version = "0.0.0.dev0"
