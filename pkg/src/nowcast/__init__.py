"""Real-time macroeconomic nowcasting engine."""

__version__ = "0.1.0"
