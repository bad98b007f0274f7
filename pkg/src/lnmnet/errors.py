"""Exception types shared across the engine."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A run config, network spec, or argument failed validation."""


class DataError(ValueError):
    """An input data file is malformed; carries a byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(ArithmeticError):
    """A computation produced non-finite values or diverged."""

    def __init__(self, message, layer=None, timestep=None, epoch=None):
        parts = [message]
        if epoch is not None:
            parts.append(f"epoch {epoch}")
        if layer is not None:
            parts.append(f"layer {layer}")
        if timestep is not None:
            parts.append(f"timestep {timestep}")
        super().__init__(": ".join([parts[0], ", ".join(parts[1:])]) if len(parts) > 1 else message)
        self.layer = layer
        self.timestep = timestep
        self.epoch = epoch
