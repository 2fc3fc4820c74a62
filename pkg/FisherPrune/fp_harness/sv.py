"""
命令注册

和插件里 SV.on_command 的写法一样：每个命令是一个被装饰的函数，
关键字即子命令名；参数声明挂在装饰器上，统一生成 argparse 解析器。
处理函数返回 retcode，由 send_diff_msg 按表输出对应消息。
"""

import argparse
from dataclasses import field, dataclass
from typing import Any, Dict, List, Tuple, Callable, Sequence

from ..utils.logger import MSG_PREFIX, logger

Handler = Callable[[argparse.Namespace], int]


@dataclass
class Arg:
    flags: Tuple[str, ...]
    kwargs: Dict[str, Any] = field(default_factory=dict)


def arg(*flags: str, **kwargs) -> Arg:
    return Arg(flags, kwargs)


@dataclass
class Command:
    keyword: Tuple[str, ...]
    func: Handler
    help: str
    args: List[Arg]


class SV:
    def __init__(self, name: str, common: Sequence[Arg] = ()):
        self.name = name
        self.common = list(common)
        self.commands: Dict[str, Command] = {}

    def on_command(
        self,
        keyword: Tuple[str, ...],
        help: str = "",
        args: Sequence[Arg] = (),
    ) -> Callable[[Handler], Handler]:
        def decorator(func: Handler) -> Handler:
            cmd = Command(tuple(keyword), func, help or (func.__doc__ or "").strip(), list(args))
            for k in keyword:
                self.commands[k] = cmd
            return func

        return decorator

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=self.name.lower())
        subs = parser.add_subparsers(dest="command", required=True)
        seen = set()
        for cmd in self.commands.values():
            if id(cmd) in seen:
                continue
            seen.add(id(cmd))
            first, *aliases = cmd.keyword
            sub = subs.add_parser(first, aliases=aliases, help=cmd.help.splitlines()[0] if cmd.help else None)
            for a in self.common + cmd.args:
                sub.add_argument(*a.flags, **a.kwargs)
        return parser

    def dispatch(self, ns: argparse.Namespace) -> int:
        return self.commands[ns.command].func(ns)


def send_diff_msg(retcode: int, table: Dict[int, str]) -> int:
    """按 retcode 输出消息：0 为 info，其余为 error；表里没有的 retcode 原样返回"""
    msg = table.get(retcode)
    if msg is not None:
        if retcode == 0:
            logger.success(f"{MSG_PREFIX} {msg}")
        else:
            logger.error(f"{MSG_PREFIX} {msg}")
    return retcode

