"""
Scenario files shipped with the package, addressable by name
"""

from pathlib import Path
from typing import Dict, Union

from typing_extensions import Final


SCENARIO_DIR: Final = Path(__file__).parent

SCENARIOS: Final[Dict[str, Path]] = {
    name: SCENARIO_DIR / f"{name}.ini"
    for name in ("default", "staggered", "s-curve", "open-water", "narrow-gap")
}


def scenario_path(name_or_path: Union[str, Path]) -> Path:
    """A registered scenario name, otherwise a path to a scenario file"""
    return SCENARIOS.get(str(name_or_path), Path(name_or_path))
