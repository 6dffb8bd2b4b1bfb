"""CAN sender authentication from ECU power traces, with black-box explanations."""

__version__ = "0.1.0"
