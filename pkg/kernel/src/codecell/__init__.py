"""codecell: a stateful Python execution worker behind a stdio JSON protocol."""

from codecell.worker import Response, Session, handle_line, serve

__all__ = ["Response", "Session", "handle_line", "serve"]
