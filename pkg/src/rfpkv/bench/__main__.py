import sys

from rfpkv.bench.cli import main

sys.exit(main())
