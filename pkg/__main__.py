import sys

from itl_seg.__main__ import run

# Debug entry point: `python __main__.py train --config ...` from the repository root

if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
