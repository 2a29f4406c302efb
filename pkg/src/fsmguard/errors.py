"""Exception types shared across the toolchain."""


class FsmError(ValueError):
    """Invalid FSM description.

    ``code`` is a stable diagnostic identifier such as ``unknown-state``;
    ``line``/``col`` are 1-based and ``None`` when the FsmSpec was built in
    memory rather than parsed.
    """

    def __init__(self, code: str, message: str, line: int | None = None, col: int | None = None):
        self.code = code
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(f"{where}{code}: {message}")
