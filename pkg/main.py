# main.py
import os
import sys

# Исправление кодировки для Windows консоли
if os.name == 'nt':  # Windows
    sys.stdout.reconfigure(encoding='utf-8')
    sys.stderr.reconfigure(encoding='utf-8')

import argparse
import logging

# Импорты из наших модулей
import config
import database
import field
import handlers
from logging_utils import setup_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choquard", description="Спектральные эксперименты с уравнением Шокара")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in handlers.COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="путь к JSON-конфигурации")
        cmd.add_argument("--seed", type=int, default=None, help="переопределяет seed из конфигурации")
        cmd.add_argument("--threads", type=int, default=config.THREADS, help="потоки БПФ и прогонов по ε")
        cmd.add_argument("--out", default=None, help="каталог результатов")
    return parser


def validate_config(args: argparse.Namespace) -> list[str]:
    """Проверяет окружение перед запуском."""
    errors = []

    if args.threads is not None and args.threads < 1:
        errors.append("--threads должен быть >= 1")

    # Проверка доступности файла БД
    try:
        db_dir = os.path.dirname(config.DB_FILE) or '.'
        if not os.access(db_dir, os.W_OK):
            errors.append(f"Нет прав на запись в директорию журнала: {db_dir}")
    except Exception as e:
        errors.append(f"Ошибка проверки журнала: {e}")

    return errors


def print_startup_banner(command: str):
    """Выводит баннер при запуске."""
    banner = f"""
═══════════════════════════════════════════════════════════
  CHOQUARD: спектральные эксперименты
  Подкоманда: {command}
═══════════════════════════════════════════════════════════
"""
    logger.info(banner)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    print_startup_banner(args.command)

    env_errors = validate_config(args)
    if env_errors:
        for error in env_errors:
            logger.error(f"   {error}")
        handlers.emit({"ok": False, "command": args.command, "error": "; ".join(env_errors),
                        "kind": "EnvironmentError"})
        return 2

    field.set_workers(args.threads)
    cfg_text = None
    try:
        cfg = config.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        cfg_text = config.dump(cfg)
        out_dir = args.out or cfg.sections.get("output", {}).get("directory") or config.DEFAULT_OUT_DIR
        ctx = handlers.RunContext(out_dir=out_dir, seed=cfg.seed, threads=args.threads)
    except config.ConfigError as e:
        logger.error(f"❌ Ошибка конфигурации: {e}", exc_info=True)
        handlers.emit(handlers.error_record(args.command, e))
        return 2

    try:
        database.init_db()
    except Exception as e:
        logger.warning(f"⚠️ Журнал запусков недоступен, продолжаем без него: {e}")
        ctx.use_db = False

    handler = handlers.COMMANDS[args.command]
    try:
        code = handler(cfg, ctx)
    except Exception as e:
        logger.error(f"❌ Команда {args.command} завершилась ошибкой: {e}", exc_info=True)
        handlers.emit(handlers.error_record(args.command, e))
        code = handlers.exit_code_for(e)

    if ctx.use_db:
        try:
            database.record_run(ctx.run_id, args.command, cfg_text, code)
        except Exception as e:
            logger.warning(f"⚠️ Не удалось записать запуск в журнал: {e}")
    return code


if __name__ == '__main__':
    sys.exit(main())
