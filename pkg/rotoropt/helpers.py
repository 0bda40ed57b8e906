import subprocess
import sys
import logging
import hashlib
import platform
import contextlib
from colorama import Fore, Style
from yaspin import yaspin

LEVEL_COLORS = {
    logging.DEBUG: Fore.WHITE + Style.DIM,
    logging.INFO: Fore.CYAN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.RED + Style.BRIGHT,
}

LEVEL_ICONS = {
    logging.WARNING: "⚠️  ",
    logging.ERROR: "❌ ",
    logging.CRITICAL: "❌ ",
}


class ColorFormatter(logging.Formatter):
    """Colour log records the same way the command line colours its own output."""

    def format(self, record):
        message = super().format(record)
        color = LEVEL_COLORS.get(record.levelno, "")
        icon = LEVEL_ICONS.get(record.levelno, "")
        return f"{color}{icon}{message}{Style.RESET_ALL}"


def setup_logging(verbose=False):
    """Attach one coloured stream handler to the package logger."""
    logger = logging.getLogger("rotoropt")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ColorFormatter("%(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False
    return logger


def success(message):
    print(Fore.GREEN + f"✅ {message}")


def warn(message):
    print(Fore.YELLOW + f"⚠️  {message}")


def fail(message):
    print(Fore.RED + f"❌ {message}")


def hint(message):
    print(Fore.YELLOW + f"💡 {message}")


@contextlib.contextmanager
def stage(text, enabled=True):
    """Spinner around a long-running stage; marks it failed if the body raises."""
    if not enabled or not sys.stdout.isatty():
        print(Fore.CYAN + f"→ {text}")
        yield None
        return
    with yaspin(text=text, color="cyan") as spinner:
        try:
            yield spinner
        except BaseException:
            spinner.fail("❌")
            raise
        spinner.ok("✅")


def sha256_bytes(*chunks):
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


APPLESCRIPT_NOTIFY = "on run argv\ndisplay notification (item 2 of argv) with title (item 1 of argv)\nend run"


def send_notification(title, message):
    """Send system notification (cross-platform)."""
    try:
        system = platform.system()
        if system == "Darwin":
            subprocess.run(["osascript", "-e", APPLESCRIPT_NOTIFY, title, message], check=False,
                           stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        elif system == "Linux":
            subprocess.run(["notify-send", title, message], check=False,
                           stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        elif system == "Windows":
            try:
                from win10toast import ToastNotifier
                toaster = ToastNotifier()
                toaster.show_toast(title, message, duration=3, threaded=True)
            except ImportError:
                pass
    except Exception:
        pass
