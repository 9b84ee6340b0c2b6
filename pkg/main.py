import logging

import click

from config import config
from handlers import data, model, report
from middlewares.errors import exit_codes
from services.session import run_session

# Инициализация логирования
logging.basicConfig(
    level=config.LOG_LEVEL,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)


# Регистрация роутеров
@click.group(cls=click.CommandCollection, sources=[data.router, model.router, report.router])
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Flat YAML config file (default: $SCAWAVE_CONFIG)")
@click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE", help="Override one config key")
def cli(config_path: str, assignments: tuple):
    """Восстановление SWH по четырём каналам GNSS-R"""
    exit_codes(run_session.configure, config_path, assignments)


if __name__ == "__main__":
    cli()
