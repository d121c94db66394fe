"""Request/response and configuration schemas."""
