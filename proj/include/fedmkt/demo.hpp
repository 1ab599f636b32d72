#pragma once

// Built-in fixture for the alignment demo: a word-level tokenizer and a
// subword tokenizer whose merge rules stop short of fusing "util"+"ize", so
// the classic 2-to-1 alignment case shows up on the demo sentence.

#include <set>
#include <string>
#include <vector>

#include "fedmkt/tokenizer.hpp"

namespace fedmkt {

inline std::string demo_sentence() {
    return "we utilize the dynamic programming approach to align tokens";
}

inline TokenizerSpec demo_word_tokenizer() {
    std::vector<std::string> words{"we", "utilize", "the",   "dynamic", "programming",
                                   "approach", "to", "align", "tokens"};
    std::vector<std::string> tokens{"<unk>"};
    tokens.insert(tokens.end(), words.begin(), words.end());
    return make_tokenizer(TokenizerKind::word, make_vocabulary("demo-word", std::move(tokens), 0));
}

// Segments the demo sentence as [we, util, ize, the, dynamic, programming,
// approach, to, align, tokens]. The merges are learned from a corpus that
// contains "util" and "ize" as standalone words but never "utilize", so the
// learned rules fuse every other word completely and stop short of joining
// util+ize.
inline TokenizerSpec demo_subword_tokenizer() {
    std::vector<std::string> corpus(
        3, "we the dynamic programming approach to align tokens util ize");
    TokenizerSpec spec = subword_tokenizer_from_corpus(corpus, "demo-subword", 64);
    return spec;
}

}  // namespace fedmkt
