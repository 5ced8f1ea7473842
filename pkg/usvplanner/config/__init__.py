"""
Shipped defaults and data files
"""

from pathlib import Path
from typing import Dict

from typing_extensions import Final


CONFIG_DIR: Final = Path(__file__).parent

# Hull parameter files addressable by name from scenario files
HULL_FILES: Final[Dict[str, Path]] = {
    "otter": CONFIG_DIR / "otter_hull.ini",
}
