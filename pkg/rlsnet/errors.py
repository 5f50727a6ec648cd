class RlsnetError(Exception):
    '''
    Base error of the package. ``exit_code`` is what the CLI exits with.
    '''
    exit_code = 1


class ConfigurationError(RlsnetError, ValueError):
    exit_code = 2


class DimensionError(RlsnetError, ValueError):
    exit_code = 2


class StateError(RlsnetError, RuntimeError):
    exit_code = 2


class InputError(RlsnetError, ValueError):
    exit_code = 2


class DataFormatError(RlsnetError):
    exit_code = 3

    def __init__(self, message: str, path: str = None, offset: int = None):
        self.path = path
        self.offset = offset
        where = []
        if path is not None:
            where.append(f'path={path}')
        if offset is not None:
            where.append(f'offset={offset}')
        super().__init__(f'{message} ({", ".join(where)})' if where else message)


class SingularityError(RlsnetError, ArithmeticError):
    exit_code = 4


class NumericalError(RlsnetError, ArithmeticError):
    exit_code = 4
