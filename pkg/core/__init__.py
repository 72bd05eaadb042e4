# Core pipeline components

