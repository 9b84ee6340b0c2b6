import logging

from config.schema import AppConfig, build_config, config_hash, flat_dict, load_config, parse_assignment

logger = logging.getLogger(__name__)


class RunSession:
    """Разрешённая конфигурация текущего запуска CLI и её хеш"""

    def __init__(self):
        self.app = AppConfig()
        self.hash = config_hash(self.app)

    def configure(self, path: str = None, assignments=()) -> AppConfig:
        overrides = dict(parse_assignment(text) for text in assignments)
        self.app = load_config(path, overrides)
        self.hash = config_hash(self.app)
        logger.info(f"Config hash {self.hash} (seed {self.app.seed}, strategy {self.app.model.strategy})")
        return self.app

    def override(self, **values) -> AppConfig:
        """Переопределения из флагов отдельной команды, с пересчётом хеша"""
        values = {k: v for k, v in values.items() if v is not None}
        if values:
            self.app = build_config({**flat_dict(self.app), **values})
            self.hash = config_hash(self.app)
            logger.info(f"Command flags changed config hash to {self.hash}")
        return self.app


run_session = RunSession()
