import argparse
import sys

from . import export_features, load_toy, select_sites
from .server import ModelServer, parse_listen, serve_stdio


def main(argv=None):
    parser = argparse.ArgumentParser(prog="vtcd-server", description="Serve a model over the vtcd wire protocol")
    parser.add_argument("--weights", required=True, help="Toy transformer weights JSON")
    parser.add_argument("--manifest", help="Video set manifest listing the input volumes")
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--listen", metavar="HOST:PORT", help="Serve over TCP")
    mode.add_argument("--stdio", action="store_true", help="Serve frames over stdin/stdout")
    mode.add_argument("--export", metavar="DIR", help="Write site features and a manifest, then exit")
    parser.add_argument("--sites", nargs="*", default=None, help="Site tags to export (default all)")
    parser.add_argument("--jobs", type=int, default=4, help="Concurrent forward passes")
    args = parser.parse_args(argv)

    try:
        model = load_toy(args.weights, args.manifest)
        if args.export:
            export_features(model, sorted(model.videos), select_sites(model, args.sites), args.export)
            return 0
        if args.stdio:
            serve_stdio(model, args.jobs)
            return 0
        server = ModelServer(model, parse_listen(args.listen), args.jobs)
    except (OSError, ValueError, KeyError) as e:
        print(f"vtcd-server: {e}", file=sys.stderr)
        return 2
    print(f"listening on {server.endpoint}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
