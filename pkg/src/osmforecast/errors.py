"""Exception hierarchy shared by all osmforecast modules."""


class OsmForecastError(Exception):
    """Base class for every error raised by this package."""
