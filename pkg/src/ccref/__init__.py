"""Reference graph mining and analytics for Common Criteria certified products."""

__version__ = "0.1.0"
