from dataclasses import dataclass
from pathlib import Path
import os
from typing import Optional

from dotenv import load_dotenv

from app.exceptions import ConfigurationError

# Load environment variables from a .env file into the program's environment
load_dotenv()

DEFAULT_SEED = 0xC0FFEE
EXACT_HARD_CAP = 5000


def get_project_root() -> Path:
    """
    Get the project root directory.

    Navigates up from app/lab_config.py to the directory holding main.py.

    Returns:
        Path: The root directory path of the project.
    """
    current_file = Path(__file__)
    return current_file.parent.parent


@dataclass
class LabConfig:
    """
    Consensus-lab configuration settings.

    Manages directory paths, the default master seed, batch parallelism and the
    numerical knobs of the limit-law engine. Every value can be set through a
    CONSENSUS_LAB_* environment variable or passed to the constructor; the
    constructor argument wins.
    """
    def __init__(
        self,
        base_dir: Optional[Path] = None,
        threads: Optional[int] = None,
        seed: Optional[int] = None,
        g_grid_size: Optional[int] = None,
        g_tol: Optional[float] = None,
        exact_max_n: Optional[int] = None,
        default_encoding: Optional[str] = None,
    ):
        """
        Initialize configuration with environment variables and defaults.

        Args:
            base_dir (Optional[Path], optional): Base directory for logs and output.
            threads (Optional[int], optional): Upper bound on batch worker processes.
            seed (Optional[int], optional): Master seed used when none is given.
            g_grid_size (Optional[int], optional): Number of tabulation points of g on [0, 1).
            g_tol (Optional[float], optional): Self-consistency tolerance for g.
            exact_max_n (Optional[int], optional): Largest n accepted by the exact oracle.
            default_encoding (Optional[str], optional): Encoding for every file written.
        """
        project_root = get_project_root()
        self.base_dir = base_dir or Path(
            os.getenv('CONSENSUS_LAB_BASE_DIR', str(project_root))
        ).resolve()

        # Parallelism cap for batch runs
        self.threads = threads if threads is not None else int(
            os.getenv('CONSENSUS_LAB_THREADS', str(os.cpu_count() or 1))
        )

        # Master seed; int(..., 0) accepts both "12648430" and "0xC0FFEE"
        self.seed = seed if seed is not None else int(
            os.getenv('CONSENSUS_LAB_SEED', hex(DEFAULT_SEED)), 0
        )

        self.g_grid_size = g_grid_size if g_grid_size is not None else int(
            os.getenv('CONSENSUS_LAB_G_GRID_SIZE', '1024')
        )
        self.g_tol = g_tol if g_tol is not None else float(
            os.getenv('CONSENSUS_LAB_G_TOL', '1e-6')
        )
        self.exact_max_n = exact_max_n if exact_max_n is not None else int(
            os.getenv('CONSENSUS_LAB_EXACT_MAX_N', str(EXACT_HARD_CAP))
        )

        self.default_encoding = default_encoding or os.getenv(
            'CONSENSUS_LAB_DEFAULT_ENCODING', 'utf-8'
        )

    @property
    def log_dir(self) -> Path:
        """
        Get log directory path.

        Returns:
            Path: The log directory path.
        """
        return Path(os.getenv(
            'CONSENSUS_LAB_LOG_DIR',
            str(self.base_dir / "logs")
        )).resolve()

    @property
    def log_file(self) -> Path:
        """
        Get log file path.

        Returns:
            Path: The log file path.
        """
        return Path(os.getenv(
            'CONSENSUS_LAB_LOG_FILE',
            str(self.log_dir / "consensus_lab.log")
        )).resolve()

    @property
    def output_dir(self) -> Path:
        """
        Get the directory that relative kernel dump paths resolve against.

        Returns:
            Path: The output directory path.
        """
        return Path(os.getenv(
            'CONSENSUS_LAB_OUTPUT_DIR',
            str(self.base_dir / "output")
        )).resolve()

    def validate(self) -> None:
        """
        Validate configuration settings.

        Raises:
            ConfigurationError: If any configuration parameter is invalid.
        """
        if self.threads <= 0:
            raise ConfigurationError("threads must be positive")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")
        if self.g_grid_size <= 0:
            raise ConfigurationError("g_grid_size must be positive")
        if self.g_tol <= 0:
            raise ConfigurationError("g_tol must be positive")
        if self.exact_max_n <= 0:
            raise ConfigurationError("exact_max_n must be positive")
        if self.exact_max_n > EXACT_HARD_CAP:
            raise ConfigurationError(f"exact_max_n must not exceed {EXACT_HARD_CAP}")
