import logging
import os

from dotenv import load_dotenv

# .env in the working directory, if present; real environment variables win
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

settings = {
    'OUTPUT_ROOT': os.environ.get('GSDE_OUTPUT_ROOT') or None,  # overrides run.output_dir
    'LOG_LEVEL': os.environ.get('GSDE_LOG_LEVEL', 'INFO').upper(),
    'JOBS': int(os.environ.get('GSDE_JOBS', '1')),  # default parallel sweep processes
}


def configure_logging(level=None):
    logging.basicConfig(level=level or settings['LOG_LEVEL'], format=LOG_FORMAT, force=True)
    return logging.getLogger('gsde')


def output_root(config_dir):
    """The directory runs are written under: GSDE_OUTPUT_ROOT when set, else the config's run.output_dir."""
    return settings['OUTPUT_ROOT'] or config_dir
