import os
from typing import Optional


class _GlobalConfig:
    """Holds the process-wide settings of daepinn such as the output root and number formatting.

    Notes
    -----
    This should not be instantiated directly by the user. There is an instance of the `_GlobalConfig` in this module,
    which is what should be used. Access as either `daepinn.GlobalConfig` or `daepinn.global_config.GlobalConfig`.
    """

    # protected attributes are ones that are computed/go through some light processing upon setting or
    # are processed upon accessing. The rest, which use primitive types, such as `str`, can remain public
    _output_root: Optional[str] = None

    float_digits: int = 17
    log_level: str = "INFO"
    log_format: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"
    output_root_env: str = "DAEPINN_OUTPUT_ROOT"

    def reset(self) -> None:
        """Resets the global config container to its initial state"""
        self.__dict__.clear()  # Wipe instance values to fallback to the class defaults

    @property
    def output_root(self) -> str:
        """Returns the default directory under which run artifacts are written.

        The explicitly set value wins, followed by the `DAEPINN_OUTPUT_ROOT` environment variable and finally `runs`.
        """
        if self._output_root is not None:
            return self._output_root
        return os.getenv(self.output_root_env, None) or "runs"

    @output_root.setter
    def output_root(self, root: Optional[str]) -> None:
        """Sets the default output root at a global level"""
        self._output_root = root

    def fmt(self, value: float) -> str:
        """Formats a float with the configured number of significant digits"""
        return f"{value:.{self.float_digits}g}"


GlobalConfig = _GlobalConfig()
