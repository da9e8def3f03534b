"""Fixed 5x7 bitmap font for burning caption text into frames.

Each glyph is five column bytes; bit N of a column (LSB first) lights the
pixel N rows below the anchor. Covers printable ASCII 0x20..0x7E. The table
is part of the wire-visible behaviour of the caption operation, so any other
implementation must embed byte-identical columns.
"""

from __future__ import annotations

GLYPH_WIDTH = 5
GLYPH_HEIGHT = 7
GLYPH_ADVANCE = 6  # one blank column between glyphs

_TABLE = """
20 00 00 00 00 00
21 00 00 5F 00 00
22 00 07 00 07 00
23 14 7F 14 7F 14
24 24 2A 7F 2A 12
25 23 13 08 64 62
26 36 49 55 22 50
27 00 05 03 00 00
28 00 1C 22 41 00
29 00 41 22 1C 00
2A 14 08 3E 08 14
2B 08 08 3E 08 08
2C 00 50 30 00 00
2D 08 08 08 08 08
2E 00 60 60 00 00
2F 20 10 08 04 02
30 3E 51 49 45 3E
31 00 42 7F 40 00
32 42 61 51 49 46
33 21 41 45 4B 31
34 18 14 12 7F 10
35 27 45 45 45 39
36 3C 4A 49 49 30
37 01 71 09 05 03
38 36 49 49 49 36
39 06 49 49 29 1E
3A 00 36 36 00 00
3B 00 56 36 00 00
3C 08 14 22 41 00
3D 14 14 14 14 14
3E 00 41 22 14 08
3F 02 01 51 09 06
40 32 49 79 41 3E
41 7E 11 11 11 7E
42 7F 49 49 49 36
43 3E 41 41 41 22
44 7F 41 41 22 1C
45 7F 49 49 49 41
46 7F 09 09 09 01
47 3E 41 49 49 7A
48 7F 08 08 08 7F
49 00 41 7F 41 00
4A 20 40 41 3F 01
4B 7F 08 14 22 41
4C 7F 40 40 40 40
4D 7F 02 0C 02 7F
4E 7F 04 08 10 7F
4F 3E 41 41 41 3E
50 7F 09 09 09 06
51 3E 41 51 21 5E
52 7F 09 19 29 46
53 46 49 49 49 31
54 01 01 7F 01 01
55 3F 40 40 40 3F
56 1F 20 40 20 1F
57 3F 40 38 40 3F
58 63 14 08 14 63
59 07 08 70 08 07
5A 61 51 49 45 43
5B 00 7F 41 41 00
5C 02 04 08 10 20
5D 00 41 41 7F 00
5E 04 02 01 02 04
5F 40 40 40 40 40
60 00 01 02 04 00
61 20 54 54 54 78
62 7F 48 44 44 38
63 38 44 44 44 20
64 38 44 44 48 7F
65 38 54 54 54 18
66 08 7E 09 01 02
67 0C 52 52 52 3E
68 7F 08 04 04 78
69 00 44 7D 40 00
6A 20 40 44 3D 00
6B 7F 10 28 44 00
6C 00 41 7F 40 00
6D 7C 04 18 04 78
6E 7C 08 04 04 78
6F 38 44 44 44 38
70 7C 14 14 14 08
71 08 14 14 18 7C
72 7C 08 04 04 08
73 48 54 54 54 20
74 04 3F 44 40 20
75 3C 40 40 20 7C
76 1C 20 40 20 1C
77 3C 40 30 40 3C
78 44 28 10 28 44
79 0C 50 50 50 3C
7A 44 64 54 4C 44
7B 00 08 36 41 00
7C 00 00 7F 00 00
7D 00 41 36 08 00
7E 10 08 08 10 08
"""


def _parse_table(text: str) -> dict[str, tuple[int, ...]]:
    glyphs: dict[str, tuple[int, ...]] = {}
    for line in text.split("\n"):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        code, columns = int(parts[0], 16), tuple(int(p, 16) for p in parts[1:])
        assert len(columns) == GLYPH_WIDTH
        glyphs[chr(code)] = columns
    return glyphs


GLYPHS = _parse_table(_TABLE)

assert len(GLYPHS) == 0x7F - 0x20


def glyph_columns(ch: str) -> tuple[int, ...]:
    """Column bytes for one character; KeyError for anything outside 0x20..0x7E."""
    return GLYPHS[ch]
