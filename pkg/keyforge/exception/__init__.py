import sys


class KeyforgeException(Exception):

    def __init__(self, error_message, error_detail: sys = sys):
        super().__init__(str(error_message))
        self.error_message = KeyforgeException.get_error_detail(
            error_message, error_detail
        )

    @staticmethod
    def get_error_detail(error_message, error_detail: sys) -> str:
        _, _, exec_tb = error_detail.exc_info()
        if exec_tb is None:
            return str(error_message)
        exception_block_line_number = exec_tb.tb_frame.f_lineno
        try_block_line_number = exec_tb.tb_lineno
        file_name = exec_tb.tb_frame.f_code.co_filename
        error_message = f"""
                Error occurred in script:
                [ {file_name} ] at
                try block line number: [{try_block_line_number}] and exception block line number: [{exception_block_line_number}]
                error message: [{error_message}]
                """
        return error_message

    def __str__(self):
        return self.error_message

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.args[0]!r})"


class InvalidParamsError(KeyforgeException):
    """Keystream parameters do not match their layout."""


class CounterOverflowError(KeyforgeException):
    """Block counter would wrap inside one message."""


class InvalidInputError(KeyforgeException):
    pass


class ScanRangeError(KeyforgeException):
    pass


class CaptureParseError(KeyforgeException):
    pass


class UnsupportedProtocolError(KeyforgeException):
    pass


class ProtocolDetectionError(KeyforgeException):
    pass


class TruncatedRecordError(KeyforgeException):
    """A TLS record runs past the end of its stream. `partial` holds the records framed so far."""

    def __init__(self, error_message, partial=None, error_detail: sys = sys):
        super().__init__(error_message, error_detail)
        self.partial = partial


class FixtureGenerationError(KeyforgeException):
    pass


class InvalidConfigError(KeyforgeException):
    pass
