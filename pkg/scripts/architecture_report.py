#!/usr/bin/env python3
"""Print the shape trace and resource accounting for a profile.

Usage: python scripts/architecture_report.py [paper|desk]
"""

import sys

from atcnn.model import (
    count_resources,
    format_resources,
    format_trace,
    get_profile,
    shape_trace,
)


def main() -> int:
    name = sys.argv[1] if len(sys.argv) > 1 else "paper"
    cfg = get_profile(name)
    print(f"== {name} profile: shape trace ==")
    print(format_trace(shape_trace(cfg)))
    print()
    print(f"== {name} profile: resources ==")
    print(format_resources(count_resources(cfg)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
