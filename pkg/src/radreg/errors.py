"""Common exception base class.

Every error raised by this package derives from RadregError so the CLI can
map any domain failure to a nonzero exit status with a one-line message.
"""


class RadregError(Exception):
    pass
