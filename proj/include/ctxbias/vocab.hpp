#pragma once

#include "ctxbias/tensor.hpp"

namespace ctxbias {

// Token id layout: [PAD, EOS, SEP, PROMPT][common tokens][topic pairs].
// Topic tokens come in confusable pairs {a, a'}; both members of pair i share
// one ambiguous observation symbol, so acoustics alone cannot separate them.
struct Vocab {
  int vocab_size = 64;
  int num_pairs = 8;

  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kSep = 2;
  static constexpr int kPrompt = 3;
  static constexpr int kReserved = 4;

  void validate() const {
    check(num_common() >= 1, "vocab: no room for common tokens");
    check(num_pairs >= 1, "vocab: need at least one confusable pair");
  }

  int num_common() const { return vocab_size - kReserved - 2 * num_pairs; }
  int common_begin() const { return kReserved; }
  int common_end() const { return kReserved + num_common(); }
  int topic_begin() const { return common_end(); }

  bool is_reserved(int tok) const { return tok >= 0 && tok < kReserved; }
  bool is_topic(int tok) const { return tok >= topic_begin() && tok < vocab_size; }
  bool is_common(int tok) const { return tok >= common_begin() && tok < common_end(); }

  int pair_of(int tok) const {
    check(is_topic(tok), "vocab: token " + std::to_string(tok) + " is not a topic token");
    return (tok - topic_begin()) / 2;
  }
  int pair_member(int pair, int member) const { return topic_begin() + 2 * pair + member; }
  int partner(int tok) const {
    check(is_topic(tok), "vocab: token " + std::to_string(tok) + " has no partner");
    int off = tok - topic_begin();
    return topic_begin() + (off ^ 1);
  }

  // Observation alphabet: one symbol per token id, plus one shared ambiguous
  // symbol per confusable pair.
  int num_obs_symbols() const { return vocab_size + num_pairs; }
  int obs_of_token(int tok) const { return tok; }
  int ambiguous_symbol(int pair) const { return vocab_size + pair; }
  bool is_ambiguous_symbol(int sym) const { return sym >= vocab_size; }
  int pair_of_ambiguous(int sym) const { return sym - vocab_size; }
};

}  // namespace ctxbias
