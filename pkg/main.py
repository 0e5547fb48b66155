#!/usr/bin/env python3
"""
splatcore - object-centric 2D Gaussian splatting on the CPU
"""

import sys

from core.config import Config
from interfaces.cli import CLIInterface


def main():
    """Main entry point"""
    config = Config.from_env()
    interface = CLIInterface(config)
    try:
        exit_code = interface.run(sys.argv[1:])
    except KeyboardInterrupt:
        print("\nShutting down...")
        exit_code = 130
    sys.exit(exit_code)


if __name__ == '__main__':
    main()
