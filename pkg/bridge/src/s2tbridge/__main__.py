"""Run the bridge: python -m s2tbridge --model tiny:0 --port 8080"""

import argparse

import uvicorn

from .server import BridgeConfig, create_app


def main(argv=None):
    parser = argparse.ArgumentParser(prog="s2tbridge")
    parser.add_argument("--model", default="tiny:0",
                        help="checkpoint path or tiny:<seed>")
    parser.add_argument("--beam", type=int, default=4)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=8)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    args = parser.parse_args(argv)
    config = BridgeConfig(
        model=args.model, beam_size=args.beam, device=args.device,
        max_batch=args.max_batch, port=args.port,
    )
    uvicorn.run(create_app(config), host=args.host, port=config.port)


if __name__ == "__main__":
    main()
