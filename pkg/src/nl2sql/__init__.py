"""Multi-agent text-to-SQL engine with taxonomy-guided correction and a
Spider-format evaluation harness."""

__version__ = "0.1.0"
