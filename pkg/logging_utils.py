import logging
import os

import config

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
_DATEFMT = '%Y-%m-%d %H:%M:%S'


def setup_logging(level: str | None = None, log_file: str | None = None) -> logging.Logger:
    """Настраивает корневой логгер: файл + консоль. Повторный вызов не дублирует обработчики."""
    level_name = (level or config.LOG_LEVEL).upper()
    numeric_level = getattr(logging, level_name, logging.INFO)
    log_file = log_file or config.LOG_FILE

    root = logging.getLogger()
    root.setLevel(numeric_level)

    # Создаем форматтер
    formatter = logging.Formatter(_FORMAT, datefmt=_DATEFMT)

    # Предотвращаем дублирование логов
    for handler in list(root.handlers):
        if getattr(handler, '_choquard', False):
            root.removeHandler(handler)
            handler.close()

    # Файловый обработчик
    log_dir = os.path.dirname(log_file)
    if log_dir and not os.path.exists(log_dir):
        os.makedirs(log_dir)
    file_handler = logging.FileHandler(log_file, encoding='utf-8')
    file_handler.setLevel(numeric_level)
    file_handler.setFormatter(formatter)
    file_handler._choquard = True

    # Консольный обработчик
    console_handler = logging.StreamHandler()
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(formatter)
    console_handler._choquard = True

    root.addHandler(file_handler)
    root.addHandler(console_handler)
    return root
