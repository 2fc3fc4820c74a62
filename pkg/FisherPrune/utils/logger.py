import sys

from loguru import logger

MSG_PREFIX = "[FP]"


def setup_logger(level: str = "INFO") -> None:
    """命令行入口调用一次：只保留一个 stderr 输出，库代码不碰 sink"""
    logger.level(level.upper())
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | {message}",
    )


__all__ = ["logger", "MSG_PREFIX", "setup_logger"]
