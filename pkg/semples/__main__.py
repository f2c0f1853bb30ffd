# MIT License
# Copyright (c) 2024 The semples authors

import sys

from .cli import main

sys.exit(main())
