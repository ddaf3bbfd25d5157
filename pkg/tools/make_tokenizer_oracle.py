"""One-time generator for the tokenizer differential-test oracle.

Builds the reference BPE tokenizer (huggingface `tokenizers` library, standard
CLIP configuration) from the packaged vocab/merges files, encodes the prompt
catalog plus a 100-string corpus, and freezes the resulting id sequences into
src/diffuscope/data/tokenizer_oracle.json. The test suite then checks our
from-scratch implementation against that file; the `tokenizers` dependency is
needed only when regenerating.

Usage: python tools/make_tokenizer_oracle.py [--verify-against tokenizer.json]
"""

import argparse
import json
import sys
from pathlib import Path

from tokenizers import Regex, Tokenizer, models, normalizers, pre_tokenizers, processors

REPO = Path(__file__).resolve().parent.parent
DATA = REPO / "src" / "diffuscope" / "data"

sys.path.insert(0, str(REPO / "src"))
from diffuscope.catalog import prompt_catalog  # noqa: E402

CLIP_SPLIT = r"""<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+"""

CORPUS = [
    "",
    "a",
    "x y z",
    "a cute and adorable bunny",
    "a photo of an astronaut riding a horse on the moon",
    "hello world",
    "Hello, World!",
    "HELLO WORLD",
    "MiXeD CaSe TeXt",
    "  leading and trailing spaces  ",
    "multiple   internal    spaces",
    "tabs\tand\nnewlines",
    "it's a dog's life",
    "don't stop believing",
    "we'll see what you've done",
    "i'm sure they're here",
    "she'd rather not",
    "punctuation!!! yes??? maybe...",
    "comma, separated, keywords, list",
    "semi-colons; and: colons",
    "(parenthetical remarks) [brackets] {braces}",
    "quotes \"double\" and 'single'",
    "hyphenated-words and semi-realistic close-ups",
    "under_score and snake_case",
    "4k",
    "8k ultra hd",
    "1024x1024 resolution",
    "3 dogs and 2 cats",
    "version 2.5 release",
    "50% off sale!",
    "a+b=c math",
    "#hashtag @mention",
    "email@example.com",
    "https://example.com/path",
    "price $19.99 or €20",
    "100,000 steps",
    "one1two2three3",
    "café déjà vu",
    "naïve résumé",
    "über cool",
    "niño pequeño",
    "crème brûlée",
    "smörgåsbord",
    "日本語のテキスト",
    "中文文本",
    "한국어 텍스트",
    "Привет мир",
    "γειά σου κόσμε",
    "emoji 😀 test",
    "arrows → and ← symbols",
    "math ∑ and ∫ signs",
    "a cute and adorable kitten, watercolor",
    "oil painting of a sunset over mountains",
    "portrait of a wizard, highly detailed, fantasy",
    "cyberpunk city at night, neon lights, rain",
    "studio ghibli style landscape",
    "pixar character design sheet",
    "trending on artstation",
    "octane render, unreal engine, 8k",
    "photorealistic, sharp focus, depth of field",
    "low poly isometric room",
    "pixel art spaceship",
    "watercolor painting of a koi pond",
    "charcoal sketch of an old tree",
    "macro photo of a dewdrop on a leaf",
    "long exposure of stars over a desert",
    "bokeh lights in tokyo at dusk",
    "a steampunk airship above victorian london",
    "an underwater castle made of coral",
    "a dragon curled around a lighthouse",
    "a tiny robot watering a bonsai tree",
    "a fox reading a newspaper in a cafe",
    "an owl wearing a graduation cap",
    "two penguins sharing an umbrella",
    "a hedgehog in a teacup",
    "a hamster driving a toy car",
    "an otter juggling river stones",
    "golden hour lighting, cinematic composition",
    "soft pastel colors, dreamy atmosphere",
    "dramatic chiaroscuro lighting",
    "vaporwave aesthetic, retro colors",
    "brutalist architecture in fog",
    "art nouveau poster of a peacock",
    "ukiyo-e woodblock print of a wave",
    "stained glass window of a forest",
    "claymation still of a baker",
    "paper cutout diorama of a jungle",
    "embroidered patch of a mountain range",
    "mosaic tile pattern of fish",
    "blueprint schematic of a treehouse",
    "x-ray image of a nautilus shell",
    "thermal camera view of a city block",
    "double exposure of a wolf and a forest",
    "tilt-shift photo of a harbor town",
    "fisheye lens view of a skate park",
    "knolling photography of camping gear",
    "the quick brown fox jumps over the lazy dog",
    "pack my box with five dozen liquor jugs",
    "sphinx of black quartz judge my vow",
    "how vexingly quick daft zebras jump",
]


def build_reference() -> Tokenizer:
    vocab = json.loads((DATA / "vocab.json").read_text(encoding="utf-8"))
    merge_pairs = []
    for i, line in enumerate((DATA / "merges.txt").read_text(encoding="utf-8").splitlines()):
        if (i == 0 and line.startswith("#version")) or not line.strip():
            continue
        left, right = line.split()
        merge_pairs.append((left, right))
    tok = Tokenizer(
        models.BPE(
            vocab=vocab,
            merges=merge_pairs,
            unk_token="<|endoftext|>",
            end_of_word_suffix="</w>",
            fuse_unk=False,
        )
    )
    tok.normalizer = normalizers.Sequence(
        [normalizers.NFC(), normalizers.Replace(Regex(r"\s+"), " "), normalizers.Lowercase()]
    )
    tok.pre_tokenizer = pre_tokenizers.Sequence(
        [
            pre_tokenizers.Split(Regex(CLIP_SPLIT), behavior="removed", invert=True),
            pre_tokenizers.ByteLevel(add_prefix_space=False, use_regex=False),
        ]
    )
    tok.post_processor = processors.RobertaProcessing(
        sep=("<|endoftext|>", vocab["<|endoftext|>"]),
        cls=("<|startoftext|>", vocab["<|startoftext|>"]),
        trim_offsets=False,
        add_prefix_space=False,
    )
    return tok


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--verify-against", help="published tokenizer.json to cross-check")
    args = parser.parse_args()

    reference = build_reference()
    texts = [e.text for e in prompt_catalog()] + CORPUS

    if args.verify_against:
        published = Tokenizer.from_file(args.verify_against)
        for text in texts:
            a = reference.encode(text).ids
            b = published.encode(text).ids
            assert a == b, f"reference mismatch on {text!r}:\n{a}\n{b}"
        print(f"reference matches published tokenizer on all {len(texts)} strings")

    oracle = {
        "description": "reference BPE tokenization (ids include bos/eos, no padding)",
        "catalog": [
            {"id": e.id, "text": e.text, "ids": reference.encode(e.text).ids} for e in prompt_catalog()
        ],
        "corpus": [{"text": t, "ids": reference.encode(t).ids} for t in CORPUS],
    }
    out = DATA / "tokenizer_oracle.json"
    out.write_text(json.dumps(oracle, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    longest = max(len(c["ids"]) for c in oracle["catalog"] + oracle["corpus"])
    print(f"wrote {out} ({len(oracle['catalog'])} catalog + {len(oracle['corpus'])} corpus, longest {longest} ids)")


if __name__ == "__main__":
    main()
