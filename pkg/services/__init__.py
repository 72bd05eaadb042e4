# Service implementations

