# Utility functions for service implementations

