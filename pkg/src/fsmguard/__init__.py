"""Security pre-analysis and secure-prompt construction for FSM designs."""

__version__ = "0.1.0"
