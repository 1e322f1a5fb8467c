"""Best-effort sandbox guard for candidate code.

Denies network access (socket creation) and file writes outside an allowed
root directory. Reads stay open so imports keep working.

This module is self-contained on purpose: its source is copied verbatim into
a ``sitecustomize.py`` for full-program child processes, where ``tddshim``
itself may not be importable. Do not add tddshim imports here.
"""

import builtins
import errno
import io
import os
import socket

_REAL_OPEN = builtins.open
_WRITE_MODE_CHARS = frozenset("wax+")


def _deny_network(*_args, **_kwargs):
    raise OSError("network access is disabled inside the test sandbox")


def install(allowed_root):
    """Patch open() and socket primitives; writes allowed only under allowed_root."""
    allowed = os.path.realpath(allowed_root)

    def guarded_open(file, mode="r", *args, **kwargs):
        if not isinstance(file, int) and _WRITE_MODE_CHARS & set(str(mode)):
            path = os.path.realpath(os.path.join(os.getcwd(), os.fspath(file)))
            if path != allowed and not path.startswith(allowed + os.sep):
                raise PermissionError(
                    errno.EACCES,
                    "write outside the sandbox working directory is not allowed",
                    str(file),
                )
        return _REAL_OPEN(file, mode, *args, **kwargs)

    builtins.open = guarded_open
    io.open = guarded_open
    socket.socket = _deny_network
    socket.create_connection = _deny_network
    socket.getaddrinfo = _deny_network


def _install_from_env():
    root = os.environ.get("TDDSHIM_ALLOWED_ROOT")
    if root:
        try:
            install(root)
        except Exception:
            pass


_install_from_env()
