#!/usr/bin/env python3
# Copyright 2026 The resalign-toy Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Prepends the license header to source files that lack it.

Usage: add_license_header.py HEADER_FILE [ROOT]

HEADER_FILE holds the header as // comments; it is rewritten with # for
Python and CMake files. Files that already carry the header are skipped.
"""

import pathlib
import sys

SLASH = {".cpp", ".hpp", ".h"}
HASH = {".py", ".cmake"}
DIRS = ["include", "src", "tests", "tools", "python"]
SKIP_PARTS = {"golden", "__pycache__"}


def comment_style(path):
    if path.suffix in SLASH:
        return "//"
    if path.suffix in HASH or path.name == "CMakeLists.txt":
        return "#"
    return None


def main():
    header = pathlib.Path(sys.argv[1]).read_text().rstrip("\n") + "\n\n"
    root = pathlib.Path(sys.argv[2] if len(sys.argv) > 2 else ".")
    files = [root / "CMakeLists.txt"]
    for d in DIRS:
        files += sorted(p for p in (root / d).rglob("*") if p.is_file())
    changed = 0
    for path in files:
        style = comment_style(path)
        if style is None or SKIP_PARTS & set(path.parts):
            continue
        text = header if style == "//" else "".join(
            "#" + line[2:] if line.startswith("//") else line for line in header.splitlines(keepends=True))
        body = path.read_text()
        if text.splitlines()[0] in body.splitlines()[:3]:
            continue
        if body.startswith("#!"):
            shebang, _, rest = body.partition("\n")
            path.write_text(shebang + "\n" + text + rest)
        else:
            path.write_text(text + body)
        changed += 1
    print(f"added header to {changed} files")


if __name__ == "__main__":
    main()
