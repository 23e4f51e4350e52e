# Keeps the repository root importable from tests/
