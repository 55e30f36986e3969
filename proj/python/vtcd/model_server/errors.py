class ServerError(Exception):
    """Failure reported to clients as a protocol error frame with `code`."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


def invalid(message):
    return ServerError("invalid-argument", message)
