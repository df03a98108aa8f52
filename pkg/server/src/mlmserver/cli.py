"""Command line front end: serve a checkpoint, export its vocabulary.

``serve`` binds a TCP address and answers protocol frames until killed.
``export-vocab`` writes the id-to-surface map in the JSON format the
search client loads, which is how the vocabulary travels out of band.
"""

from __future__ import annotations

import argparse
import sys

from .backend import MaskedLmBackend
from .server import ModelServer

EXIT_OK = 0
EXIT_USAGE = 2


def _split_bind(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ValueError(f"bind address {value!r} is not HOST:PORT")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlm-server",
        description="Serve a pretrained masked LM over the framed-JSON protocol",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    serve = commands.add_parser("serve", help="run the server until interrupted")
    serve.add_argument("--model", required=True, help="checkpoint directory or model id")
    serve.add_argument("--bind", default="127.0.0.1:0", help="HOST:PORT, port 0 picks one")
    serve.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="pin algorithm selection so identical queries match exactly",
    )

    export = commands.add_parser("export-vocab", help="write the vocabulary JSON")
    export.add_argument("--model", required=True, help="checkpoint directory or model id")
    export.add_argument("--out", required=True, help="output file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "export-vocab":
        try:
            backend = MaskedLmBackend(args.model, deterministic=False)
            backend.export_vocab(args.out)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"wrote {backend.vocab_size} tokens to {args.out}")
        return EXIT_OK

    try:
        host, port = _split_bind(args.bind)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        backend = MaskedLmBackend(args.model, deterministic=args.deterministic)
        server = ModelServer(backend, host=host, port=port)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"serving {args.model} on {server.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
