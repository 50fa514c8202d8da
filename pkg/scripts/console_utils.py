"""Terminal output helpers.

Colored status lines used by the command-line front end and by the
solvers' verbose modes. Colors are dropped when stdout is not a TTY so
captured logs stay plain text.
"""

import sys

__all__ = [
    "Colors",
    "print_header",
    "print_success",
    "print_warning",
    "print_error",
    "print_info",
    "progress_bar",
]


class Colors:
    """Terminal colors for pretty output."""
    HEADER = '\033[95m'
    OKBLUE = '\033[94m'
    OKCYAN = '\033[96m'
    OKGREEN = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'


def _use_color() -> bool:
    try:
        return sys.stdout.isatty()
    except Exception:
        return False


def _paint(text: str, *codes: str) -> str:
    if not _use_color():
        return text
    return f"{''.join(codes)}{text}{Colors.ENDC}"


def print_header(text: str):
    """Print section header."""
    rule = '=' * 60
    print(f"\n{_paint(rule, Colors.HEADER, Colors.BOLD)}")
    print(_paint(text, Colors.HEADER, Colors.BOLD))
    print(f"{_paint(rule, Colors.HEADER, Colors.BOLD)}\n")


def print_success(text: str):
    print(_paint(f"✓ {text}", Colors.OKGREEN))


def print_warning(text: str):
    print(_paint(f"⚠ {text}", Colors.WARNING))


def print_error(text: str):
    print(_paint(f"✗ {text}", Colors.FAIL), file=sys.stderr)


def print_info(text: str):
    print(_paint(f"ℹ {text}", Colors.OKCYAN))


class _NullProgress:
    """Stand-in with the tqdm methods the solvers call."""

    def update(self, n: int = 1):
        pass

    def set_postfix(self, **kwargs):
        pass

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def progress_bar(total: int, desc: str = "", enabled: bool = True):
    """tqdm progress bar when available and enabled, else a no-op object."""
    if not enabled:
        return _NullProgress()
    try:
        from tqdm.auto import tqdm
    except ImportError:
        return _NullProgress()
    return tqdm(total=total, desc=desc, leave=False)
