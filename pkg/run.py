#!/usr/bin/env python
"""
Точка входа для запуска t3dnet CLI.
"""

import sys

from t3dnet.main import main

if __name__ == "__main__":
    sys.exit(main())
