"""
Blueprint: Utils - Banner Generator

This module provides the stylized startup banner of the occrec CLI.
"""

import pyfiglet
from rich.panel import Panel
from rich import box

from .logger import setup_logger

logger = setup_logger(__name__)


def create_banner(text: str = "occrec", style: str = "slant",
                  subtitle: str = "occluded retrieval by neighborhood reconstruction") -> Panel:
    """
    Create a stylized banner with the given text.

    Args:
        text: Text to display in banner
        style: Figlet font style to use
        subtitle: Line shown under the panel

    Returns:
        Panel: Rich panel containing the styled banner
    """
    try:
        figlet = pyfiglet.Figlet(font=style)
        ascii_art = figlet.renderText(text)
        body = f"[bold cyan]{ascii_art}[/bold cyan]"

    except Exception as e:
        # Unknown font: plain text keeps the CLI usable
        logger.warning(f"Banner font '{style}' unavailable: {e}")
        body = f"[bold cyan]{text}[/bold cyan]"

    return Panel(
        body,
        box=box.ROUNDED,
        border_style="blue",
        subtitle=subtitle,
        padding=(0, 2)
    )
