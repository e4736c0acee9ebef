"""Independent reference tokenizer and gram extractor used to freeze golden files.

Regex-based, written separately from the C++ scanner:
  python3 tests/oracles/reference_tokenizer.py > tests/golden/tokenizer.tsv
"""
import re
import sys

BR = re.compile(r"<[bB][rR] */? *>")
TOKEN = re.compile(r"[0-9A-Za-z\x80-\U0010ffff]+(?:'[0-9A-Za-z\x80-\U0010ffff]+)*|\S")


def tokenize(text):
    text = BR.sub(" ", text)
    text = "".join(chr(ord(c) + 32) if "A" <= c <= "Z" else c for c in text)
    return TOKEN.findall(text)


def grams(tokens, n_max):
    out = set()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            out.add("_".join(tokens[i:i + n]))
    return sorted(out)


CASES = [
    "Class acting!",
    "it doesn't even come close",
    "",
    "A really realistic, sensible movie by Ramgopal Verma.<br /><br />No stupidity like songs",
    "real 'encounters'. 2/10",
    "If it wasn't for the terrific music, I would not hesitate",
]

TABLE4_POSITIVE = (
    "a really realistic , sensible movie by ramgopal verma . no stupidity like "
    "songs as in other hindi movies . class acting by nana patekar . much similarities to "
    "real 'encounters' ."
)

if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "grams":
        for g in grams(tokenize(TABLE4_POSITIVE), 3):
            print(g)
    else:
        for c in CASES:
            print(c.replace("\t", " ") + "\t" + " ".join(tokenize(c)))
